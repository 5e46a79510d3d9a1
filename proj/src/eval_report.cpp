#include "cgdm/eval_report.hpp"

#include "cgdm/errors.hpp"
#include "cgdm/io.hpp"
#include "cgdm/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace cgdm {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

void require_same_dim(const SymMatrix& a, const SymMatrix& b, const char* what) {
  if (a.dim() != b.dim()) throw DimensionError(std::string(what) + ": dimension mismatch");
}

// Child stream ids for the parts of one instance.
enum : std::uint64_t { kData = 1, kPartition = 2, kProjection = 3, kNoise = 4, kSolver = 5 };

}  // namespace

double mse(const SymMatrix& a, const SymMatrix& b) {
  require_same_dim(a, b, "mse");
  return (a.matrix() - b.matrix()).squaredNorm() / static_cast<double>(a.matrix().size());
}

double rel_fro(const SymMatrix& a, const SymMatrix& b) {
  require_same_dim(a, b, "rel_fro");
  return (a.matrix() - b.matrix()).norm() / b.matrix().norm();
}

int aligned_eigenvector_count(const SymMatrix& sigma_hat, const SymMatrix& sigma_true, double cos_threshold) {
  require_same_dim(sigma_hat, sigma_true, "aligned_eigenvector_count");
  const Spectrum a = sym_eigendecompose(sigma_hat);
  const Spectrum b = sym_eigendecompose(sigma_true);
  int count = 0;
  for (Index j = 0; j < a.vectors.cols(); ++j) {
    if (std::abs(a.vectors.col(j).dot(b.vectors.col(j))) < cos_threshold) break;
    ++count;
  }
  return count;
}

InitKind parse_init(const std::string& name) {
  if (name == "isotropic") return InitKind::isotropic;
  if (name == "backprojection") return InitKind::backprojection;
  throw ConfigError("unknown init '" + name + "'");
}

std::string to_string(InitKind kind) { return kind == InitKind::isotropic ? "isotropic" : "backprojection"; }

std::vector<const EvalRecord*> EvalReport::for_method(const std::string& method) const {
  std::vector<const EvalRecord*> out;
  for (const EvalRecord& r : records)
    if (r.method == method) out.push_back(&r);
  return out;
}

double EvalReport::median_mse(const std::string& method) const {
  std::vector<double> v;
  for (const EvalRecord* r : for_method(method)) v.push_back(r->mse);
  return median(std::move(v));
}

double EvalReport::median_aligned(const std::string& method) const {
  std::vector<double> v;
  for (const EvalRecord* r : for_method(method)) v.push_back(r->aligned_eigs);
  return median(std::move(v));
}

double EvalReport::median_ratio(const std::string& a, const std::string& b) const {
  std::vector<double> v;
  for (const EvalRecord* ra : for_method(a))
    for (const EvalRecord* rb : for_method(b))
      if (ra->seed == rb->seed) v.push_back(ra->mse / rb->mse);
  return median(std::move(v));
}

Instance make_instance(const SymMatrix& truth, Index n, Index m, int p, double sigma_n, std::uint64_t seed) {
  const Rng root(seed);
  const DataMatrix data = sample_gaussian_data(truth, n, root.child(kData).seed());
  const PartitionPlan plan = make_partitions(n, p, root.child(kPartition).seed());
  Instance inst;
  inst.proj = draw_projections(SensingConfig{truth.dim(), m, p, sigma_n}, root.child(kProjection).seed());
  inst.meas = measure_all(data, plan, inst.proj, sigma_n, root.child(kNoise).seed());
  inst.full_sample_cov = sample_covariance(data);
  return inst;
}

EvalReport run_comparison(const Scenario& sc, const std::vector<MethodSpec>& methods, const SolverConfig& solver,
                          const ObjectiveConfig& objective, double cos_threshold) {
  EvalReport report;
  report.truth = synth_covariance(sc.cov, sc.cov_seed);
  std::vector<bool> usable(methods.size(), true);
  for (std::size_t j = 0; j < methods.size(); ++j) {
    const PreconditionerConfig& pc = methods[j].preconditioner;
    if (pc.kind == PreconditionerKind::diffusion &&
        (pc.diffusion.schedule == nullptr || (pc.diffusion.params == nullptr && !pc.diffusion.predictor))) {
      usable[j] = false;
      report.notes.push_back("skipped method '" + methods[j].name + "': no trained model or schedule available");
    }
  }
  for (const std::uint64_t seed : sc.seeds) {
    const Instance inst = make_instance(report.truth, sc.n, sc.m, sc.p, sc.sigma_n, seed);
    const SymMatrix init = sc.init == InitKind::isotropic ? isotropic_init(inst.meas, inst.proj)
                                                          : backprojection_init(inst.meas, inst.proj);
    const Problem problem{&inst.meas, &inst.proj, objective};
    for (std::size_t j = 0; j < methods.size(); ++j) {
      if (!usable[j]) continue;
      SolverConfig cfg = solver;
      cfg.preconditioner = methods[j].preconditioner;
      const auto t0 = std::chrono::steady_clock::now();
      SolveResult res = pgd_run(problem, init, cfg, Rng(seed).child(kSolver).seed());
      EvalRecord rec;
      rec.method = methods[j].name;
      rec.seed = seed;
      rec.mse = mse(res.sigma, report.truth);
      rec.rel_fro = rel_fro(res.sigma, report.truth);
      rec.aligned_eigs = aligned_eigenvector_count(res.sigma, report.truth, cos_threshold);
      rec.iters = static_cast<int>(res.trace.rows.size());
      rec.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      rec.stop_reason = to_string(res.trace.reason);
      rec.estimate = std::move(res.sigma);
      report.records.push_back(std::move(rec));
    }
  }
  return report;
}

std::vector<ReportRow> report_rows(const EvalReport& report) {
  std::vector<ReportRow> rows;
  for (const EvalRecord& r : report.records)
    rows.push_back({r.method, r.seed, r.mse, r.rel_fro, r.aligned_eigs, r.iters, r.millis});
  return rows;
}

std::string format_report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "method,seed,mse,rel_fro,aligned_eigs,iters,millis\n";
  for (const ReportRow& r : rows) {
    if (r.method.find_first_of(",\n\"") != std::string::npos) {
      throw ValidationError("report: method name '" + r.method + "' is not CSV-safe");
    }
    out += r.method + ',' + std::to_string(r.seed) + ',' + format_double(r.mse) + ',' + format_double(r.rel_fro) +
           ',' + std::to_string(r.aligned_eigs) + ',' + std::to_string(r.iters) + ',' + format_double(r.millis) +
           '\n';
  }
  return out;
}

std::vector<ReportRow> parse_report_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "method,seed,mse,rel_fro,aligned_eigs,iters,millis") {
    throw FormatError("report csv: unexpected header");
  }
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw FormatError("report csv: expected 7 fields in '" + line + "'");
    try {
      std::size_t used = 0;
      ReportRow r;
      r.method = f[0];
      r.seed = std::stoull(f[1], &used);
      if (used != f[1].size()) throw FormatError("report csv: bad seed");
      r.mse = std::stod(f[2]);
      r.rel_fro = std::stod(f[3]);
      r.aligned_eigs = std::stoi(f[4]);
      r.iters = std::stoi(f[5]);
      r.millis = std::stod(f[6]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError("report csv: cannot parse '" + line + "'");
    }
  }
  return rows;
}

// Diverging ramp: (59,76,192) at index 0, (221,221,221) at the midpoint,
// (180,4,38) at index 63, linear in between and rounded to integers.
std::array<std::uint8_t, 3> ramp_color(int index) {
  index = std::clamp(index, 0, 63);
  constexpr double lo[3] = {59, 76, 192}, mid[3] = {221, 221, 221}, hi[3] = {180, 4, 38};
  const double t = index / 63.0;
  std::array<std::uint8_t, 3> out{};
  for (int c = 0; c < 3; ++c) {
    const double v = t <= 0.5 ? lo[c] + (mid[c] - lo[c]) * (t / 0.5) : mid[c] + (hi[c] - mid[c]) * ((t - 0.5) / 0.5);
    out[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::lround(v));
  }
  return out;
}

int ramp_index(double value, const ColorScale& scale) {
  if (!(scale.hi > scale.lo)) return 0;
  const double t = (value - scale.lo) / (scale.hi - scale.lo);
  return std::clamp(static_cast<int>(std::floor(t * 64.0)), 0, 63);
}

std::string render_heatmap(const Matrix& a, const ColorScale& scale, const std::string& title) {
  if (!a.allFinite()) throw ValidationError("heatmap: non-finite matrix");
  constexpr int cell = 12, margin = 24;
  const int w = static_cast<int>(a.cols()) * cell, h = static_cast<int>(a.rows()) * cell;
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" viewBox=\"0 0 %d %d\">\n",
                w + 2 * margin, h + 3 * margin, w + 2 * margin, h + 3 * margin);
  out += buf;
  if (!title.empty()) {
    std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"16\" font-family=\"monospace\" font-size=\"12\">", margin);
    out += buf;
    for (char ch : title) {
      if (ch == '<') out += "&lt;";
      else if (ch == '>') out += "&gt;";
      else if (ch == '&') out += "&amp;";
      else out += ch;
    }
    out += "</text>\n";
  }
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      const auto c = ramp_color(ramp_index(a(i, j), scale));
      std::snprintf(buf, sizeof buf, "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"#%02x%02x%02x\"/>\n",
                    margin + static_cast<int>(j) * cell, margin + static_cast<int>(i) * cell, cell, cell, c[0], c[1],
                    c[2]);
      out += buf;
    }
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%d\" y=\"%d\" font-family=\"monospace\" font-size=\"12\">min=%s max=%s</text>\n</svg>\n",
                margin, h + 2 * margin, format_double(scale.lo).c_str(), format_double(scale.hi).c_str());
  out += buf;
  return out;
}

void emit_heatmap(const Matrix& matrix, const std::filesystem::path& path, const ColorScale& scale,
                  const std::string& title) {
  write_file(path, render_heatmap(matrix, scale, title));
}

std::vector<std::filesystem::path> emit_report_heatmaps(const EvalReport& report, const std::filesystem::path& dir) {
  ColorScale est{report.truth.matrix().minCoeff(), report.truth.matrix().maxCoeff()};
  ColorScale err{0.0, 0.0};
  for (const EvalRecord& r : report.records) {
    est.lo = std::min(est.lo, r.estimate.matrix().minCoeff());
    est.hi = std::max(est.hi, r.estimate.matrix().maxCoeff());
    err.hi = std::max(err.hi, (r.estimate.matrix() - report.truth.matrix()).cwiseAbs().maxCoeff());
  }
  std::vector<std::filesystem::path> written;
  for (const EvalRecord& r : report.records) {
    const std::string stem = r.method + "_seed" + std::to_string(r.seed);
    const auto p1 = dir / (stem + "_estimate.svg");
    const auto p2 = dir / (stem + "_abs_error.svg");
    emit_heatmap(r.estimate.matrix(), p1, est, stem + " estimate");
    emit_heatmap((r.estimate.matrix() - report.truth.matrix()).cwiseAbs(), p2, err, stem + " |error|");
    written.push_back(p1);
    written.push_back(p2);
  }
  return written;
}

}  // namespace cgdm
