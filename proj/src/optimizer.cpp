#include "cgdm/optimizer.hpp"

#include "cgdm/errors.hpp"
#include "cgdm/io.hpp"
#include "cgdm/rng.hpp"
#include "cgdm/denoiser.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace cgdm {

PreconditionerKind parse_preconditioner(const std::string& name) {
  if (name == "identity") return PreconditionerKind::identity;
  if (name == "gaussian") return PreconditionerKind::gaussian;
  if (name == "diffusion") return PreconditionerKind::diffusion;
  throw ConfigError("unknown preconditioner '" + name + "'");
}

std::string to_string(PreconditionerKind kind) {
  switch (kind) {
    case PreconditionerKind::identity: return "identity";
    case PreconditionerKind::gaussian: return "gaussian";
    case PreconditionerKind::diffusion: return "diffusion";
  }
  return "?";
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::grad_tol: return "grad_tol";
    case StopReason::obj_tol: return "obj_tol";
    case StopReason::max_iters: return "max_iters";
    case StopReason::armijo_stall: return "armijo_stall";
    case StopReason::nonfinite: return "nonfinite";
  }
  return "?";
}

SymMatrix precondition(const GradientSample& g, const PreconditionerConfig& cfg, std::uint64_t seed) {
  switch (cfg.kind) {
    case PreconditionerKind::identity:
      return g.grad;
    case PreconditionerKind::gaussian:
      return gaussian_filter_precondition(g.grad, cfg.gaussian_sigma);
    case PreconditionerKind::diffusion: {
      const DiffusionPreconditioner& d = cfg.diffusion;
      if (d.schedule == nullptr) throw ConfigError("diffusion preconditioner: no schedule loaded");
      if (!d.predictor && d.params == nullptr) throw ConfigError("diffusion preconditioner: no model loaded");
      const DiffusionSchedule& s = *d.schedule;
      const int k0 = d.start_step > 0 ? d.start_step : step_for_partitions(s, std::max(1, g.partition_count));
      const double c = s.scale_c;
      const NoisyGradient start{std::sqrt(s.alpha_bar_at(k0)) / c * g.grad, k0, c};
      NoisePredictor model = d.predictor;
      if (!model) {
        const UNetParams* params = d.params;
        model = [params](const SymMatrix& x, int k) { return UNet::predict(*params, x, k); };
      }
      const NoisyGradient out = reverse_sample(start, s, model, seed, ReverseOptions{k0, d.zero_sigma});
      return c * out.value;
    }
  }
  throw ConfigError("precondition: unknown kind");
}

ArmijoResult armijo_step(const SymMatrix& sigma, double f_sigma, const SymMatrix& direction, const ObjectiveFn& f,
                         double lambda0, const ArmijoConfig& cfg) {
  ArmijoResult r;
  r.sigma_next = sigma;
  r.f_next = f_sigma;
  const double d2 = direction.matrix().squaredNorm();
  if (!(d2 > 0.0)) {
    r.stalled = true;
    return r;
  }
  double lambda = lambda0;
  for (int j = 0; j <= cfg.max_backtracks; ++j, lambda *= cfg.shrink) {
    SymMatrix cand = project_psd(sigma - lambda * direction);
    const double fc = f(cand);
    if (fc <= f_sigma - cfg.c * lambda * d2) {
      r.lambda = lambda;
      r.sigma_next = std::move(cand);
      r.f_next = fc;
      r.backtracks = j;
      return r;
    }
  }
  r.stalled = true;
  r.backtracks = cfg.max_backtracks;
  return r;
}

void validate(const SolverConfig& cfg) {
  if (cfg.lambda0 < 0.0 || !(cfg.armijo.c > 0.0 && cfg.armijo.c < 1.0) ||
      !(cfg.armijo.shrink > 0.0 && cfg.armijo.shrink < 1.0) || cfg.armijo.max_backtracks < 0 ||
      cfg.max_iters < 1 || !(cfg.tol_obj >= 0.0) || cfg.obj_window < 1 || cfg.denoise_every < 1) {
    throw ConfigError("solver: invalid configuration");
  }
  if (!(cfg.preconditioner.gaussian_sigma > 0.0)) throw ConfigError("solver: gaussian sigma must be > 0");
}

double default_lambda0(const ProjectionEnsemble& proj) {
  double s = 0.0;
  for (const Matrix& p : proj.matrices) {
    const double n = spectral_norm(p);
    s += n * n * n * n;
  }
  return 1.0 / (2.0 * s);
}

SymMatrix backprojection_init(const MeasurementSet& meas, const ProjectionEnsemble& proj) {
  if (meas.count() != proj.count() || proj.count() == 0) throw DimensionError("backprojection_init: count mismatch");
  std::vector<Matrix> terms(static_cast<std::size_t>(proj.count()));
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const Matrix& p = proj.matrices[i];
    terms[i] = p * meas.s_tilde[i].matrix() * p.transpose();
  }
  return project_psd(pairwise_sum(terms) * (1.0 / proj.count()));
}

SymMatrix isotropic_init(const MeasurementSet& meas, const ProjectionEnsemble& proj) {
  if (meas.count() != proj.count() || proj.count() == 0) throw DimensionError("isotropic_init: count mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < proj.matrices.size(); ++i) {
    const Matrix q = proj.matrices[i].transpose() * proj.matrices[i];
    num += meas.s_tilde[i].matrix().cwiseProduct(q).sum();
    den += q.squaredNorm();
  }
  return SymMatrix::identity(proj.matrices[0].rows()) * std::max(0.0, num / den);
}

SolveResult pgd_run(const Problem& problem, const SymMatrix& init, const SolverConfig& solver, std::uint64_t seed) {
  validate(solver);
  if (problem.meas == nullptr || problem.proj == nullptr) throw ContractError("pgd_run: problem is incomplete");
  const MeasurementSet& meas = *problem.meas;
  const ProjectionEnsemble& proj = *problem.proj;
  const ObjectiveFn f = [&](const SymMatrix& s) { return objective_value(s, meas, proj, problem.objective); };
  const double lambda0 = solver.lambda0 > 0.0 ? solver.lambda0 : default_lambda0(proj);
  const double tol_grad = solver.tol_grad >= 0.0 ? solver.tol_grad : 1e-6 * static_cast<double>(init.dim());
  const Rng root(seed);
  using Clock = std::chrono::steady_clock;

  SolveResult res;
  SymMatrix sigma = project_psd(init);
  double fs = f(sigma);
  res.trace.initial_objective = fs;
  res.sigma = sigma;
  res.objective = fs;
  if (!std::isfinite(fs)) {
    res.trace.reason = StopReason::nonfinite;
    return res;
  }
  res.trace.reason = StopReason::max_iters;
  int small_steps = 0;
  std::optional<SymMatrix> cached_error;
  for (int it = 0; it < solver.max_iters; ++it) {
    const auto t0 = Clock::now();
    const GradientSample g = gradient(sigma, meas, proj, problem.objective);
    SymMatrix d;
    if (solver.preconditioner.kind == PreconditionerKind::identity || it % solver.denoise_every == 0 ||
        !cached_error) {
      d = precondition(g, solver.preconditioner, root.child(static_cast<std::uint64_t>(it)).seed());
      cached_error = g.grad - d;
    } else {
      d = g.grad - *cached_error;
    }
    TraceRow row;
    row.iter = it;
    row.grad_norm = g.grad.matrix().norm();
    row.precond_grad_norm = d.matrix().norm();
    if (row.precond_grad_norm <= tol_grad) {
      row.objective = fs;
      row.millis = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
      res.trace.rows.push_back(row);
      res.trace.reason = StopReason::grad_tol;
      break;
    }
    const ArmijoResult step = armijo_step(sigma, fs, d, f, lambda0, solver.armijo);
    row.lambda = step.lambda;
    row.objective = step.f_next;
    row.millis = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    res.trace.rows.push_back(row);
    if (step.stalled) {
      res.trace.reason = StopReason::armijo_stall;
      break;
    }
    if (!std::isfinite(step.f_next)) {
      res.trace.reason = StopReason::nonfinite;
      break;
    }
    const double rel = (fs - step.f_next) / std::max(std::abs(fs), std::numeric_limits<double>::min());
    sigma = step.sigma_next;
    fs = step.f_next;
    res.trace.min_eigenvalues.push_back(sym_eigendecompose(sigma).values.minCoeff());
    if (fs <= res.objective) {
      res.objective = fs;
      res.sigma = sigma;
    }
    small_steps = rel < solver.tol_obj ? small_steps + 1 : 0;
    if (small_steps >= solver.obj_window) {
      res.trace.reason = StopReason::obj_tol;
      break;
    }
  }
  return res;
}

std::string format_trace_csv(const SolveTrace& trace) {
  std::string out = "iter,objective,grad_norm,precond_grad_norm,lambda,millis\n";
  for (const TraceRow& r : trace.rows) {
    out += std::to_string(r.iter) + ',' + format_double(r.objective) + ',' + format_double(r.grad_norm) + ',' +
           format_double(r.precond_grad_norm) + ',' + format_double(r.lambda) + ',' + format_double(r.millis) + '\n';
  }
  return out;
}

void write_trace_csv(const SolveTrace& trace, const std::filesystem::path& path) {
  write_file(path, format_trace_csv(trace));
}

}  // namespace cgdm
