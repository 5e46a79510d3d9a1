#pragma once

#include "cgdm/diffusion.hpp"
#include "cgdm/linalg.hpp"
#include "cgdm/objective.hpp"
#include "cgdm/sensing.hpp"
#include "cgdm/unet.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace cgdm {

enum class PreconditionerKind { identity, gaussian, diffusion };

PreconditionerKind parse_preconditioner(const std::string& name);
std::string to_string(PreconditionerKind kind);

struct DiffusionPreconditioner {
  const DiffusionSchedule* schedule = nullptr;
  /// Learned model; ignored when `predictor` is set.
  const UNetParams* params = nullptr;
  /// Override for the noise model (tests plug in oracles here).
  NoisePredictor predictor;
  /// 0: step whose partition count is nearest the gradient's.
  int start_step = 0;
  bool zero_sigma = false;
};

struct PreconditionerConfig {
  PreconditionerKind kind = PreconditionerKind::identity;
  double gaussian_sigma = 1.0;
  DiffusionPreconditioner diffusion;
};

/// identity: g; gaussian: blurred g; diffusion: g / c placed at the start
/// step as sqrt(alpha_bar) g / c, reverse chain to step 0, times c.
/// Throws ConfigError when the diffusion kind has no model or schedule.
SymMatrix precondition(const GradientSample& g, const PreconditionerConfig& cfg, std::uint64_t seed);

struct ArmijoConfig {
  double c = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 30;
};

struct ArmijoResult {
  double lambda = 0.0;
  SymMatrix sigma_next;
  double f_next = 0.0;
  int backtracks = 0;
  bool stalled = false;
};

using ObjectiveFn = std::function<double(const SymMatrix&)>;

/// Largest lambda = lambda0 shrink^j, j <= max_backtracks, with
/// f(P_D(sigma - lambda d)) <= f(sigma) - c lambda ||d||_F^2. On failure
/// lambda = 0, stalled = true and sigma_next = sigma.
ArmijoResult armijo_step(const SymMatrix& sigma, double f_sigma, const SymMatrix& direction, const ObjectiveFn& f,
                         double lambda0, const ArmijoConfig& cfg);

struct SolverConfig {
  double lambda0 = 0.0;  // 0: 1 / (2 sum_i ||P_i||_2^4)
  ArmijoConfig armijo;
  int max_iters = 500;
  double tol_grad = -1.0;  // negative: 1e-6 l
  double tol_obj = 1e-8;
  int obj_window = 5;
  /// Recompute the preconditioned direction every this many iterations; in
  /// between, the last estimated error g - d is subtracted from the new g.
  int denoise_every = 1;
  PreconditionerConfig preconditioner;
};

void validate(const SolverConfig& cfg);

struct Problem {
  const MeasurementSet* meas = nullptr;
  const ProjectionEnsemble* proj = nullptr;
  ObjectiveConfig objective;
};

struct TraceRow {
  int iter = 0;
  double objective = 0.0;  // after the step of this iteration
  double grad_norm = 0.0;
  double precond_grad_norm = 0.0;
  double lambda = 0.0;
  double millis = 0.0;
};

enum class StopReason { grad_tol, obj_tol, max_iters, armijo_stall, nonfinite };
std::string to_string(StopReason reason);

struct SolveTrace {
  double initial_objective = 0.0;
  std::vector<TraceRow> rows;
  StopReason reason = StopReason::max_iters;
  /// Minimum eigenvalue of every accepted iterate, for feasibility checks.
  std::vector<double> min_eigenvalues;
};

struct SolveResult {
  SymMatrix sigma;  // best-so-far iterate
  double objective = 0.0;
  SolveTrace trace;
};

double default_lambda0(const ProjectionEnsemble& proj);

/// P_D((1/p) sum_i P_i S~_i P_i^T).
SymMatrix backprojection_init(const MeasurementSet& meas, const ProjectionEnsemble& proj);
/// t I with t the least-squares fit of S~_i by t P_i^T P_i, clamped at 0.
SymMatrix isotropic_init(const MeasurementSet& meas, const ProjectionEnsemble& proj);

SolveResult pgd_run(const Problem& problem, const SymMatrix& init, const SolverConfig& solver, std::uint64_t seed);

// iter,objective,grad_norm,precond_grad_norm,lambda,millis
std::string format_trace_csv(const SolveTrace& trace);
void write_trace_csv(const SolveTrace& trace, const std::filesystem::path& path);

}  // namespace cgdm
