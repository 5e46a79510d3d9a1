#pragma once

#include "cgdm/data_model.hpp"
#include "cgdm/linalg.hpp"
#include "cgdm/optimizer.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cgdm {

/// (1/l^2) ||a - b||_F^2
double mse(const SymMatrix& sigma_hat, const SymMatrix& sigma_true);
/// ||a - b||_F / ||b||_F
double rel_fro(const SymMatrix& sigma_hat, const SymMatrix& sigma_true);

/// Largest r such that |<v_hat_j, v_j>| >= cos_threshold for every j <= r,
/// eigenvectors taken in descending eigenvalue order.
int aligned_eigenvector_count(const SymMatrix& sigma_hat, const SymMatrix& sigma_true, double cos_threshold);

enum class InitKind { isotropic, backprojection };
InitKind parse_init(const std::string& name);
std::string to_string(InitKind kind);

struct Scenario {
  CovarianceSpec cov;
  std::uint64_t cov_seed = 0;
  Index n = 4096;
  Index m = 9;
  int p = 256;
  double sigma_n = 0.01;
  std::vector<std::uint64_t> seeds;
  InitKind init = InitKind::isotropic;
};

struct MethodSpec {
  std::string name;
  PreconditionerConfig preconditioner;
};

struct EvalRecord {
  std::string method;
  std::uint64_t seed = 0;
  double mse = 0.0;
  double rel_fro = 0.0;
  int aligned_eigs = 0;
  int iters = 0;
  double millis = 0.0;
  std::string stop_reason;
  SymMatrix estimate;
};

struct EvalReport {
  SymMatrix truth;
  std::vector<EvalRecord> records;  // seed-major, methods in the given order
  std::vector<std::string> notes;   // skipped methods and why

  std::vector<const EvalRecord*> for_method(const std::string& method) const;
  double median_mse(const std::string& method) const;
  double median_aligned(const std::string& method) const;
  /// Median over seeds of mse(a) / mse(b) for the same seed.
  double median_ratio(const std::string& a, const std::string& b) const;
};

/// Instance shared by every method for one seed: the same data, partitions,
/// projections and measurements.
struct Instance {
  MeasurementSet meas;
  ProjectionEnsemble proj;
  SymMatrix full_sample_cov;
};
Instance make_instance(const SymMatrix& truth, Index n, Index m, int p, double sigma_n, std::uint64_t seed);

/// Paired comparison. A diffusion method without a model or schedule is
/// skipped and recorded in `notes`.
EvalReport run_comparison(const Scenario& scenario, const std::vector<MethodSpec>& methods,
                          const SolverConfig& solver, const ObjectiveConfig& objective,
                          double cos_threshold = 0.9);

// method,seed,mse,rel_fro,aligned_eigs,iters,millis
struct ReportRow {
  std::string method;
  std::uint64_t seed = 0;
  double mse = 0.0;
  double rel_fro = 0.0;
  int aligned_eigs = 0;
  int iters = 0;
  double millis = 0.0;
};
std::string format_report_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> parse_report_csv(std::string_view text);
std::vector<ReportRow> report_rows(const EvalReport& report);

struct ColorScale {
  double lo = 0.0;
  double hi = 1.0;
};

/// 64-entry diverging ramp, RGB 0..255.
std::array<std::uint8_t, 3> ramp_color(int index);
int ramp_index(double value, const ColorScale& scale);

/// Deterministic SVG grid of the matrix on a fixed color scale, annotated with
/// the scale's numeric min and max.
std::string render_heatmap(const Matrix& matrix, const ColorScale& scale, const std::string& title);
void emit_heatmap(const Matrix& matrix, const std::filesystem::path& path, const ColorScale& scale,
                  const std::string& title = "");

/// Writes <method>_seed<seed>_estimate.svg and _abs_error.svg for every
/// record. Estimates share one scale (covering the truth); errors another.
std::vector<std::filesystem::path> emit_report_heatmaps(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace cgdm
