#include "cgdm/diffusion.hpp"

#include "cgdm/errors.hpp"
#include "cgdm/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace cgdm {

DiffusionSchedule schedule_from_beta(std::vector<double> beta, std::vector<int> partition_of_step,
                                     double scale_c) {
  const int T = static_cast<int>(beta.size());
  if (T < 1) throw ValidationError("schedule: T must be >= 1");
  if (partition_of_step.size() != beta.size()) {
    throw ValidationError("schedule: partition_of_step must have T entries");
  }
  if (!(scale_c > 0.0) || !std::isfinite(scale_c)) throw ValidationError("schedule: scale_c must be > 0");
  DiffusionSchedule s;
  s.T = T;
  s.scale_c = scale_c;
  s.alpha.resize(beta.size());
  s.alpha_bar.resize(beta.size());
  s.sigma.resize(beta.size());
  double running = 1.0;
  for (std::size_t k = 0; k < beta.size(); ++k) {
    if (!(beta[k] > 0.0 && beta[k] < 1.0)) {
      throw ValidationError("schedule: beta_" + std::to_string(k + 1) + " = " + format_double(beta[k]) +
                            " outside (0, 1)");
    }
    s.alpha[k] = 1.0 - beta[k];
    running *= s.alpha[k];
    s.alpha_bar[k] = running;
    s.sigma[k] = std::sqrt(beta[k]);
    if (partition_of_step[k] < 1 || (k > 0 && partition_of_step[k] < partition_of_step[k - 1])) {
      throw ValidationError("schedule: partition_of_step must be positive and nondecreasing");
    }
  }
  s.beta = std::move(beta);
  s.partition_of_step = std::move(partition_of_step);
  return s;
}

DiffusionSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw ValidationError("build_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ValidationError("build_schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> beta(static_cast<std::size_t>(T));
  std::vector<int> parts(static_cast<std::size_t>(T));
  for (int k = 0; k < T; ++k) {
    const double t = T == 1 ? 0.0 : static_cast<double>(k) / (T - 1);
    beta[static_cast<std::size_t>(k)] = beta_start + t * (beta_end - beta_start);
    parts[static_cast<std::size_t>(k)] = k + 1;
  }
  return schedule_from_beta(std::move(beta), std::move(parts), 1.0);
}

SymMatrix symmetric_noise(Index dim, Rng& rng) {
  Matrix g(dim, dim);
  for (Index j = 0; j < dim; ++j)
    for (Index i = 0; i < dim; ++i) g(i, j) = rng.normal();
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  Matrix out(dim, dim);
  for (Index j = 0; j < dim; ++j) {
    out(j, j) = g(j, j);
    for (Index i = j + 1; i < dim; ++i) out(i, j) = out(j, i) = (g(i, j) + g(j, i)) * inv_sqrt2;
  }
  return SymMatrix(std::move(out));
}

NoisyGradient forward_step(const NoisyGradient& x_prev, int k, const DiffusionSchedule& schedule,
                           std::uint64_t seed) {
  if (k < 1 || k > schedule.T) throw ValidationError("forward_step: step out of range");
  if (x_prev.step != k - 1) {
    throw ValidationError("forward_step: input is at step " + std::to_string(x_prev.step) +
                          ", expected " + std::to_string(k - 1));
  }
  Rng rng(seed);
  const SymMatrix eps = symmetric_noise(x_prev.value.dim(), rng);
  const double beta = schedule.beta_at(k);
  return {std::sqrt(1.0 - beta) * x_prev.value + std::sqrt(beta) * eps, k, x_prev.scale};
}

NoisyGradient forward_marginal_with(const NoisyGradient& x0, int k, const DiffusionSchedule& schedule,
                                    const SymMatrix& eps) {
  if (x0.step != 0) throw ValidationError("forward_marginal: input must be at step 0");
  if (k < 1 || k > schedule.T) throw ValidationError("forward_marginal: step out of range");
  const double ab = schedule.alpha_bar_at(k);
  return {std::sqrt(ab) * x0.value + std::sqrt(1.0 - ab) * eps, k, x0.scale};
}

NoisyGradient forward_marginal(const NoisyGradient& x0, int k, const DiffusionSchedule& schedule,
                               std::uint64_t seed) {
  Rng rng(seed);
  return forward_marginal_with(x0, k, schedule, symmetric_noise(x0.value.dim(), rng));
}

DiffusionSchedule calibrate_schedule(const std::vector<ErrorStat>& stats, double scale_c) {
  if (stats.empty()) throw CalibrationError("calibrate_schedule: no error statistics");
  if (!(scale_c > 0.0)) throw CalibrationError("calibrate_schedule: scale must be > 0");
  for (std::size_t k = 0; k < stats.size(); ++k) {
    if (!(stats[k].std > 0.0) || !(stats[k].p >= 1.0) || !std::isfinite(stats[k].std)) {
      throw CalibrationError("calibrate_schedule: stat " + std::to_string(k) + " is not positive", stats[k].std);
    }
    if (k > 0 && !(stats[k].p > stats[k - 1].p && stats[k].std > stats[k - 1].std)) {
      throw CalibrationError("calibrate_schedule: stats not strictly increasing at p = " +
                                 format_double(stats[k].p) + " (std " + format_double(stats[k].std) +
                                 " after " + format_double(stats[k - 1].std) + ")",
                             stats[k].std - stats[k - 1].std);
    }
  }
  std::vector<double> beta(stats.size());
  std::vector<int> parts(stats.size());
  double prev = 1.0;
  for (std::size_t k = 0; k < stats.size(); ++k) {
    const double r = stats[k].std / scale_c;
    const double ab = 1.0 / (1.0 + r * r);
    beta[k] = 1.0 - ab / prev;
    prev = ab;
    parts[k] = std::max(1, static_cast<int>(std::lround(stats[k].p)));
    if (k > 0) parts[k] = std::max(parts[k], parts[k - 1]);
  }
  try {
    return schedule_from_beta(std::move(beta), std::move(parts), scale_c);
  } catch (const ValidationError& e) {
    throw CalibrationError(std::string("calibrate_schedule: ") + e.what());
  }
}

double PowerLaw::operator()(double p) const { return a * std::pow(p, gamma); }

PowerLaw fit_power_law(const std::vector<ErrorStat>& stats) {
  if (stats.size() < 2) throw CalibrationError("fit_power_law: need at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const ErrorStat& s : stats) {
    if (!(s.p > 0.0 && s.std > 0.0)) throw CalibrationError("fit_power_law: nonpositive point", s.std);
    const double x = std::log(s.p), y = std::log(s.std);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(stats.size());
  const double den = n * sxx - sx * sx;
  if (!(den > 0.0)) throw CalibrationError("fit_power_law: partition counts must differ");
  PowerLaw law;
  law.gamma = (n * sxy - sx * sy) / den;
  law.a = std::exp((sy - law.gamma * sx) / n);
  return law;
}

std::vector<ErrorStat> geometric_grid(const PowerLaw& law, double p_min, double p_max, int T) {
  if (T < 1 || !(p_min > 0.0) || !(p_max >= p_min)) throw ValidationError("geometric_grid: bad range");
  std::vector<ErrorStat> out(static_cast<std::size_t>(T));
  for (int k = 0; k < T; ++k) {
    const double t = T == 1 ? 1.0 : static_cast<double>(k) / (T - 1);
    const double p = std::exp(std::log(p_min) + t * (std::log(p_max) - std::log(p_min)));
    out[static_cast<std::size_t>(k)] = {p, law(p)};
  }
  return out;
}

int step_for_partitions(const DiffusionSchedule& schedule, double p) {
  int best = 1;
  double best_d = INFINITY;
  for (int k = 1; k <= schedule.T; ++k) {
    const double d = std::abs(std::log(static_cast<double>(schedule.partitions_at(k))) - std::log(p));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

double robust_scale(std::vector<double> values) {
  if (values.empty()) throw ValidationError("robust_scale: no values");
  for (double& v : values) v = std::abs(v);
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  double med = values[mid];
  if (values.size() % 2 == 0) {
    med = 0.5 * (med + *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return 1.4826 * med;
}

NoisyGradient reverse_sample(const NoisyGradient& x_start, const DiffusionSchedule& schedule,
                             const NoisePredictor& eps_model, std::uint64_t seed,
                             const ReverseOptions& options) {
  const int start = options.start_step == 0 ? schedule.T : options.start_step;
  if (start < 1 || start > schedule.T) throw ValidationError("reverse_sample: start step out of range");
  if (x_start.step != start) {
    throw ValidationError("reverse_sample: input is at step " + std::to_string(x_start.step) +
                          ", expected " + std::to_string(start));
  }
  Rng rng(seed);
  Matrix x = x_start.value.matrix();
  for (int k = start; k >= 1; --k) {
    const SymMatrix eps = eps_model(symmetrize(x), k);
    if (eps.dim() != x.rows()) throw DimensionError("reverse_sample: model output has the wrong size");
    const double a = schedule.alpha_at(k);
    const double ab = schedule.alpha_bar_at(k);
    x = (x - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps.matrix()) / std::sqrt(a);
    if (k > 1 && !options.zero_sigma) x += schedule.sigma_at(k) * symmetric_noise(x.rows(), rng).matrix();
    x = symmetrize(x).matrix();
  }
  return {symmetrize(x), 0, x_start.scale};
}

std::string encode_schedule(const DiffusionSchedule& schedule) {
  nlohmann::ordered_json j;
  j["T"] = schedule.T;
  j["beta"] = schedule.beta;
  j["scale_c"] = schedule.scale_c;
  j["partition_of_step"] = schedule.partition_of_step;
  return j.dump() + "\n";
}

DiffusionSchedule decode_schedule(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("schedule: malformed JSON: ") + e.what());
  }
  int T = 0;
  std::vector<double> beta;
  std::vector<int> parts;
  double c = 0.0;
  try {
    T = j.at("T").get<int>();
    beta = j.at("beta").get<std::vector<double>>();
    c = j.at("scale_c").get<double>();
    parts = j.at("partition_of_step").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("schedule: ") + e.what());
  }
  if (T != static_cast<int>(beta.size())) throw FormatError("schedule: T does not match beta length");
  try {
    return schedule_from_beta(std::move(beta), std::move(parts), c);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("schedule: ") + e.what());
  }
}

void save_schedule(const DiffusionSchedule& schedule, const std::filesystem::path& path) {
  write_file(path, encode_schedule(schedule));
}

DiffusionSchedule load_schedule(const std::filesystem::path& path) { return decode_schedule(read_file(path)); }

}  // namespace cgdm
