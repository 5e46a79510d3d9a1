#include "cgdm/denoiser.hpp"

#include "cgdm/io.hpp"
#include "cgdm/rng.hpp"

#include <cmath>
#include <map>
#include <string>

namespace cgdm {

namespace {

struct Span {
  double* data;
  std::size_t size;
};

std::vector<Span> spans(UNetParams& p) {
  std::vector<Span> out;
  p.visit([&](const std::string&, const std::vector<std::int64_t>&, double* data, std::size_t size) {
    out.push_back({data, size});
  });
  return out;
}

Matrix tensor_to_matrix(const Tensor& t, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = t.values[static_cast<std::size_t>(r * cols + c)];
  return m;
}

Tensor matrix_to_tensor(std::string name, const Matrix& m) {
  Tensor t{std::move(name), {m.rows(), m.cols()}, {}};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) t.values.push_back(m(r, c));
  return t;
}

std::map<std::string, const Tensor*> index_tensors(const std::vector<Tensor>& tensors) {
  std::map<std::string, const Tensor*> out;
  for (const Tensor& t : tensors) out[t.name] = &t;
  return out;
}

const Tensor& require(const std::map<std::string, const Tensor*>& idx, const std::string& name) {
  auto it = idx.find(name);
  if (it == idx.end()) throw FormatError("container: missing tensor '" + name + "'");
  return *it->second;
}

int reflect_index(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

std::vector<std::size_t> TrainingSet::counts_per_step(int T) const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(T), 0);
  for (const TrainingRecord& r : records)
    if (r.k >= 1 && r.k <= T) ++counts[static_cast<std::size_t>(r.k - 1)];
  return counts;
}

void validate(const TrainingSet& set, int T) {
  if (set.records.empty()) throw ValidationError("training set is empty");
  const Index l = set.records.front().x0.dim();
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const TrainingRecord& r = set.records[i];
    if (r.k < 1 || r.k > T) throw ValidationError("training record " + std::to_string(i) + ": step out of range");
    if (r.x0.dim() != l || r.eps.dim() != l) {
      throw ValidationError("training record " + std::to_string(i) + ": matrix size differs");
    }
  }
}

std::vector<Tensor> training_set_to_tensors(const TrainingSet& set) {
  std::vector<Tensor> out;
  out.reserve(3 * set.records.size());
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const std::string id = std::to_string(i);
    out.push_back(matrix_to_tensor("x0/" + id, set.records[i].x0.matrix()));
    out.push_back(matrix_to_tensor("eps/" + id, set.records[i].eps.matrix()));
    out.push_back(Tensor{"k/" + id, {1}, {static_cast<double>(set.records[i].k)}});
  }
  return out;
}

TrainingSet training_set_from_tensors(const std::vector<Tensor>& tensors) {
  const auto idx = index_tensors(tensors);
  TrainingSet set;
  for (std::size_t i = 0;; ++i) {
    const std::string id = std::to_string(i);
    if (idx.find("x0/" + id) == idx.end()) break;
    const Tensor& x0 = require(idx, "x0/" + id);
    const Tensor& eps = require(idx, "eps/" + id);
    const Tensor& k = require(idx, "k/" + id);
    if (x0.shape.size() != 2 || x0.shape != eps.shape || k.values.size() != 1) {
      throw FormatError("training record " + id + ": bad shapes");
    }
    const double kv = k.values[0];
    if (kv != std::floor(kv) || kv < 1) throw FormatError("training record " + id + ": bad step");
    set.records.push_back({SymMatrix(tensor_to_matrix(x0, x0.shape[0], x0.shape[1])),
                           SymMatrix(tensor_to_matrix(eps, eps.shape[0], eps.shape[1])), static_cast<int>(kv)});
  }
  if (set.records.size() * 3 != tensors.size()) throw FormatError("training set: unexpected tensors");
  return set;
}

void save_training_set(const TrainingSet& set, const std::filesystem::path& path) {
  write_container(path, training_set_to_tensors(set));
}

TrainingSet load_training_set(const std::filesystem::path& path) {
  return training_set_from_tensors(read_container(path));
}

Matrix noised_input(const TrainingRecord& r, const DiffusionSchedule& schedule) {
  const double ab = schedule.alpha_bar_at(r.k);
  return std::sqrt(ab) * r.x0.matrix() + std::sqrt(1.0 - ab) * r.eps.matrix();
}

double loss_and_gradient(const std::vector<const TrainingRecord*>& batch, const UNetParams& params,
                         const DiffusionSchedule& schedule, UNetParams& grads) {
  if (batch.empty()) throw ValidationError("loss: empty batch");
  std::vector<Matrix> inputs;
  std::vector<const Matrix*> xs;
  std::vector<int> steps;
  inputs.reserve(batch.size());
  for (const TrainingRecord* r : batch) {
    inputs.push_back(noised_input(*r, schedule));
    steps.push_back(r->k);
  }
  for (const Matrix& m : inputs) xs.push_back(&m);
  UNetCache cache;
  const std::vector<Matrix> out = UNet::forward(params, xs, steps, &cache);
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  std::vector<Matrix> d_out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Matrix diff = out[i] - batch[i]->eps.matrix();
    loss += diff.squaredNorm();
    d_out[i] = 2.0 * inv * diff;
  }
  grads = UNetParams::zeros(params.arch);
  UNet::backward(params, cache, d_out, grads);
  return loss * inv;
}

double loss_simple(const std::vector<const TrainingRecord*>& batch, const UNetParams& params,
                   const DiffusionSchedule& schedule) {
  if (batch.empty()) throw ValidationError("loss: empty batch");
  double loss = 0.0;
  constexpr std::size_t chunk = 64;
  for (std::size_t start = 0; start < batch.size(); start += chunk) {
    const std::size_t end = std::min(batch.size(), start + chunk);
    std::vector<Matrix> inputs;
    std::vector<const Matrix*> xs;
    std::vector<int> steps;
    for (std::size_t i = start; i < end; ++i) {
      inputs.push_back(noised_input(*batch[i], schedule));
      steps.push_back(batch[i]->k);
    }
    for (const Matrix& m : inputs) xs.push_back(&m);
    const std::vector<Matrix> out = UNet::forward(params, xs, steps);
    for (std::size_t i = start; i < end; ++i) loss += (out[i - start] - batch[i]->eps.matrix()).squaredNorm();
  }
  return loss / static_cast<double>(batch.size());
}

double loss_simple(const TrainingSet& set, const UNetParams& params, const DiffusionSchedule& schedule) {
  std::vector<const TrainingRecord*> batch;
  for (const TrainingRecord& r : set.records) batch.push_back(&r);
  return loss_simple(batch, params, schedule);
}

double zero_predictor_loss(const TrainingSet& set) {
  if (set.records.empty()) throw ValidationError("loss: empty set");
  double loss = 0.0;
  for (const TrainingRecord& r : set.records) loss += r.eps.matrix().squaredNorm();
  return loss / static_cast<double>(set.records.size());
}

std::vector<Tensor> train_state_to_tensors(const TrainState& state) {
  std::vector<Tensor> out = params_to_tensors(state.params, "params/");
  for (Tensor& t : params_to_tensors(state.m, "adam_m/")) out.push_back(std::move(t));
  for (Tensor& t : params_to_tensors(state.v, "adam_v/")) out.push_back(std::move(t));
  out.push_back(Tensor{"step", {1}, {static_cast<double>(state.step)}});
  return out;
}

TrainState train_state_from_tensors(const std::vector<Tensor>& tensors) {
  TrainState s;
  s.params = params_from_tensors(tensors, "params/");
  s.m = params_from_tensors(tensors, "adam_m/");
  s.v = params_from_tensors(tensors, "adam_v/");
  const Tensor& step = find_tensor(tensors, "step");
  if (step.values.size() != 1 || step.values[0] < 0) throw FormatError("checkpoint: bad step");
  s.step = static_cast<int>(step.values[0]);
  return s;
}

TrainResult train(const TrainingSet& train_set, const DiffusionSchedule& schedule, const TrainHyper& hyper,
                  std::optional<TrainState> resume, std::optional<int> stop_after) {
  validate(train_set, schedule.T);
  if (!(hyper.lr > 0.0) || hyper.batch < 1 || hyper.steps < 1 || !(hyper.clip_norm > 0.0)) {
    throw ValidationError("train: invalid hyperparameters");
  }
  const Rng root(hyper.seed);
  TrainResult result;
  TrainState& st = result.state;
  if (resume) {
    st = std::move(*resume);
  } else {
    Rng init_rng = root.child(0xC0FFEEULL << 32);
    st.params = UNetParams::init(hyper.arch, init_rng);
    st.m = UNetParams::zeros(hyper.arch);
    st.v = UNetParams::zeros(hyper.arch);
    st.step = 0;
  }
  const int end = std::min(hyper.steps, stop_after.value_or(hyper.steps));
  const std::size_t n = train_set.records.size();
  const double pi = std::acos(-1.0);

  UNetParams grads;
  std::vector<const TrainingRecord*> batch(static_cast<std::size_t>(hyper.batch));
  for (; st.step < end; ++st.step) {
    const int t = st.step;
    Rng rng = root.child(static_cast<std::uint64_t>(t));
    for (auto& r : batch) r = &train_set.records[rng.below(n)];
    const double loss = loss_and_gradient(batch, st.params, schedule, grads);

    std::vector<Span> gs = spans(grads);
    double norm2 = 0.0;
    for (const Span& s : gs)
      for (std::size_t i = 0; i < s.size; ++i) norm2 += s.data[i] * s.data[i];
    if (!std::isfinite(loss) || !std::isfinite(norm2)) {
      throw TrainingError("train: loss diverged at step " + std::to_string(t), st.params, t);
    }
    const double norm = std::sqrt(norm2);
    const double clip = norm > hyper.clip_norm ? hyper.clip_norm / norm : 1.0;

    const double lr = hyper.lr * 0.5 * (1.0 + std::cos(pi * t / hyper.steps));
    const double bc1 = 1.0 - std::pow(hyper.beta1, t + 1);
    const double bc2 = 1.0 - std::pow(hyper.beta2, t + 1);
    std::vector<Span> ps = spans(st.params), ms = spans(st.m), vs = spans(st.v);
    for (std::size_t j = 0; j < ps.size(); ++j) {
      for (std::size_t i = 0; i < ps[j].size; ++i) {
        const double g = gs[j].data[i] * clip;
        double& m = ms[j].data[i];
        double& v = vs[j].data[i];
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g;
        ps[j].data[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + hyper.adam_eps);
      }
    }
    result.loss_log.push_back(loss);
  }
  return result;
}

std::pair<TrainingSet, TrainingSet> split_holdout(const TrainingSet& set, double fraction) {
  if (set.records.size() < 2 || !(fraction > 0.0 && fraction < 1.0)) {
    throw ValidationError("split_holdout: need at least two records and 0 < fraction < 1");
  }
  const std::size_t held = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * set.records.size()));
  const std::size_t cut = set.records.size() - held;
  TrainingSet a, b;
  a.records.assign(set.records.begin(), set.records.begin() + static_cast<std::ptrdiff_t>(cut));
  b.records.assign(set.records.begin() + static_cast<std::ptrdiff_t>(cut), set.records.end());
  return {std::move(a), std::move(b)};
}

std::vector<Tensor> params_to_tensors(const UNetParams& params, const std::string& prefix) {
  std::vector<Tensor> out;
  params.visit([&](const std::string& name, const std::vector<std::int64_t>& shape, const double* data,
                   std::size_t size) { out.push_back(Tensor{prefix + name, shape, std::vector<double>(data, data + size)}); });
  return out;
}

UNetParams params_from_tensors(const std::vector<Tensor>& tensors, const std::string& prefix) {
  const auto idx = index_tensors(tensors);
  const Tensor& emb = require(idx, prefix + "emb.w");
  const Tensor& d1 = require(idx, prefix + "down1.w");
  const Tensor& d2 = require(idx, prefix + "down2.w");
  if (emb.shape.size() != 2 || d1.shape.size() != 4 || d2.shape.size() != 4) {
    throw FormatError("weights: unexpected tensor rank");
  }
  UNetArch arch;
  arch.d_emb = static_cast<int>(emb.shape[0]);
  arch.c1 = static_cast<int>(emb.shape[1]);
  arch.c2 = static_cast<int>(d1.shape[3]);
  arch.c3 = static_cast<int>(d2.shape[3]);
  UNetParams p;
  try {
    p = UNetParams::zeros(arch);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("weights: ") + e.what());
  }
  std::size_t used = 0;
  p.visit([&](const std::string& name, const std::vector<std::int64_t>& shape, double* data, std::size_t size) {
    const Tensor& t = require(idx, prefix + name);
    if (t.shape != shape) throw FormatError("weights: tensor '" + prefix + name + "' has inconsistent shape");
    std::copy(t.values.begin(), t.values.end(), data);
    (void)size;
    ++used;
  });
  std::size_t with_prefix = 0;
  for (const Tensor& t : tensors)
    if (t.name.compare(0, prefix.size(), prefix) == 0) ++with_prefix;
  if (prefix.empty() && with_prefix != used) throw FormatError("weights: unexpected extra tensors");
  return p;
}

void save_params(const UNetParams& params, const std::filesystem::path& path) {
  write_container(path, params_to_tensors(params));
}

UNetParams load_params(const std::filesystem::path& path) { return params_from_tensors(read_container(path)); }

SymMatrix gaussian_filter_precondition(const SymMatrix& g, double kernel_sigma) {
  if (!(kernel_sigma > 0.0) || !std::isfinite(kernel_sigma)) {
    throw ValidationError("gaussian filter: sigma must be > 0");
  }
  const int radius = static_cast<int>(std::ceil(3.0 * kernel_sigma));
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (kernel_sigma * kernel_sigma));
    w[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : w) v /= total;

  const Matrix& a = g.matrix();
  const int n = static_cast<int>(a.rows());
  Matrix rows_done = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int t = -radius; t <= radius; ++t) s += w[static_cast<std::size_t>(t + radius)] * a(i, reflect_index(j + t, n));
      rows_done(i, j) = s;
    }
  Matrix out = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int t = -radius; t <= radius; ++t)
        s += w[static_cast<std::size_t>(t + radius)] * rows_done(reflect_index(i + t, n), j);
      out(i, j) = s;
    }
  return symmetrize(out);
}

}  // namespace cgdm
