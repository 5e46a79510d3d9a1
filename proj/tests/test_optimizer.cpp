#include "cgdm/errors.hpp"
#include "cgdm/optimizer.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace cgdm;
using cgdm::test::make_problem;

namespace {

/// Exact second moments: S~_i = P_i^T Sigma P_i.
MeasurementSet population_measurements(const SymMatrix& sigma, const ProjectionEnsemble& proj) {
  MeasurementSet meas;
  meas.block_size = 1;
  for (const Matrix& p : proj.matrices) meas.s_tilde.push_back(symmetrize(p.transpose() * sigma.matrix() * p));
  return meas;
}

/// Unconstrained least-squares minimizer over symmetric matrices, solved
/// directly with QR on the upper-triangle parametrization.
SymMatrix least_squares_oracle(const MeasurementSet& meas, const ProjectionEnsemble& proj) {
  const Index l = proj.matrices[0].rows();
  const Index m = proj.matrices[0].cols();
  const Index unknowns = l * (l + 1) / 2;
  const Index rows = static_cast<Index>(proj.count()) * m * m;
  Matrix a(rows, unknowns);
  Eigen::VectorXd rhs(rows);
  Index col = 0;
  for (Index i = 0; i < l; ++i) {
    for (Index j = i; j < l; ++j, ++col) {
      Matrix e = Matrix::Zero(l, l);
      e(i, j) = 1.0;
      e(j, i) = 1.0;
      Index row = 0;
      for (const Matrix& p : proj.matrices) {
        const Matrix block = p.transpose() * e * p;
        for (Index c = 0; c < m; ++c)
          for (Index r = 0; r < m; ++r) a(row++, col) = block(r, c);
      }
    }
  }
  Index row = 0;
  for (const SymMatrix& s : meas.s_tilde)
    for (Index c = 0; c < m; ++c)
      for (Index r = 0; r < m; ++r) rhs(row++) = s(r, c);
  const Eigen::VectorXd theta = a.colPivHouseholderQr().solve(rhs);
  Matrix out(l, l);
  col = 0;
  for (Index i = 0; i < l; ++i)
    for (Index j = i; j < l; ++j, ++col) out(i, j) = out(j, i) = theta(col);
  return SymMatrix(out);
}

double rel_err(const SymMatrix& a, const SymMatrix& b) {
  return (a.matrix() - b.matrix()).norm() / b.matrix().norm();
}

// Predictor that returns the exact noise relative to a known clean target.
NoisePredictor oracle_predictor(const SymMatrix& clean_scaled, const DiffusionSchedule& s) {
  return [clean_scaled, &s](const SymMatrix& x, int k) {
    const double ab = s.alpha_bar_at(k);
    return SymMatrix((x.matrix() - std::sqrt(ab) * clean_scaled.matrix()) / std::sqrt(1.0 - ab));
  };
}

// Deliberately poor noise model: a fixed random symmetric matrix.
NoisePredictor junk_predictor(std::uint64_t seed, Index l) {
  Rng rng(seed);
  const SymMatrix noise = cgdm::test::random_sym(l, rng);
  return [noise](const SymMatrix&, int) { return noise; };
}

}  // namespace

TEST(Precondition, IdentityPassesThrough) {
  Rng rng(1);
  GradientSample g;
  g.grad = cgdm::test::random_sym(6, rng);
  EXPECT_EQ(precondition(g, PreconditionerConfig{}, 0), g.grad);
}

TEST(Precondition, GaussianKeepsConstant) {
  GradientSample g;
  g.grad = SymMatrix(Matrix::Constant(8, 8, 2.5));
  PreconditionerConfig cfg;
  cfg.kind = PreconditionerKind::gaussian;
  cfg.gaussian_sigma = 1.5;
  EXPECT_LE((precondition(g, cfg, 0).matrix() - g.grad.matrix()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Precondition, DiffusionWithOracleRecoversClean) {
  const DiffusionSchedule s = build_schedule(16, 1e-3, 0.3);
  Rng rng(2);
  const SymMatrix clean = cgdm::test::random_sym(8, rng);
  const SymMatrix error = cgdm::test::random_sym(8, rng);
  GradientSample g;
  g.grad = SymMatrix(clean.matrix() + 0.5 * error.matrix());
  g.partition_count = 4;
  PreconditionerConfig cfg;
  cfg.kind = PreconditionerKind::diffusion;
  cfg.diffusion.schedule = &s;
  cfg.diffusion.start_step = 10;
  cfg.diffusion.predictor = oracle_predictor(SymMatrix(clean.matrix() / s.scale_c), s);
  const SymMatrix out = precondition(g, cfg, 7);
  EXPECT_LE((out.matrix() - clean.matrix()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Precondition, DiffusionWithoutModelIsConfigError) {
  const DiffusionSchedule s = build_schedule(4, 0.01, 0.2);
  GradientSample g;
  g.grad = SymMatrix::identity(4);
  PreconditionerConfig cfg;
  cfg.kind = PreconditionerKind::diffusion;
  EXPECT_THROW(precondition(g, cfg, 0), ConfigError);
  cfg.diffusion.schedule = &s;
  EXPECT_THROW(precondition(g, cfg, 0), ConfigError);
}

TEST(Precondition, ParsesNames) {
  EXPECT_EQ(parse_preconditioner("diffusion"), PreconditionerKind::diffusion);
  EXPECT_EQ(to_string(parse_preconditioner("gaussian")), "gaussian");
  EXPECT_THROW(parse_preconditioner("newton"), ConfigError);
}

TEST(Armijo, QuadraticAcceptsHalfStep) {
  Rng rng(3);
  const SymMatrix a = cgdm::test::random_psd(5, rng);
  const ObjectiveFn f = [&](const SymMatrix& s) { return (s.matrix() - a.matrix()).squaredNorm(); };
  const SymMatrix sigma = SymMatrix::identity(5);
  const SymMatrix d(2.0 * (sigma.matrix() - a.matrix()));
  const ArmijoResult r = armijo_step(sigma, f(sigma), d, f, 1.0, ArmijoConfig{0.1, 0.5, 30});
  EXPECT_FALSE(r.stalled);
  EXPECT_EQ(r.lambda, 0.5);
  EXPECT_EQ(r.backtracks, 1);
  EXPECT_LE(r.f_next, 1e-20);
}

TEST(Armijo, ZeroDirectionStalls) {
  const ObjectiveFn f = [](const SymMatrix& s) { return s.matrix().squaredNorm(); };
  const SymMatrix sigma = SymMatrix::identity(3);
  const ArmijoResult r = armijo_step(sigma, 3.0, SymMatrix(Matrix::Zero(3, 3)), f, 1.0, ArmijoConfig{});
  EXPECT_TRUE(r.stalled);
  EXPECT_EQ(r.lambda, 0.0);
  EXPECT_EQ(r.sigma_next, sigma);
}

TEST(Armijo, AscentDirectionStalls) {
  const ObjectiveFn f = [](const SymMatrix& s) { return s.matrix().squaredNorm(); };
  const SymMatrix sigma = SymMatrix::identity(3);
  const ArmijoResult r = armijo_step(sigma, 3.0, SymMatrix(-Matrix::Identity(3, 3)), f, 1.0, ArmijoConfig{1e-4, 0.5, 5});
  EXPECT_TRUE(r.stalled);
  EXPECT_EQ(r.backtracks, 5);
  EXPECT_EQ(r.f_next, 3.0);
}

TEST(Armijo, SufficientDecreaseHolds) {
  const auto pr = make_problem(8, 3, 8, 512, 0.1, 4);
  const ObjectiveFn f = [&](const SymMatrix& s) { return objective_value(s, pr.meas, pr.proj, {}); };
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const SymMatrix sigma = cgdm::test::random_psd(8, rng);
    const SymMatrix d = gradient(sigma, pr.meas, pr.proj, {}).grad;
    const double fs = f(sigma);
    const ArmijoResult r = armijo_step(sigma, fs, d, f, default_lambda0(pr.proj), ArmijoConfig{});
    if (r.stalled) continue;
    EXPECT_LE(r.f_next, fs - 1e-4 * r.lambda * d.matrix().squaredNorm());
    EXPECT_EQ(r.f_next, f(r.sigma_next));
  }
}

TEST(Pgd, RecoversTruthFromExactMoments) {
  const auto pr = make_problem(8, 4, 8, 64, 0.0, 6);
  const MeasurementSet meas = population_measurements(pr.truth, pr.proj);
  SolverConfig cfg;
  cfg.max_iters = 5000;
  cfg.tol_obj = 0.0;
  const SolveResult r = pgd_run({&meas, &pr.proj, {}}, isotropic_init(meas, pr.proj), cfg, 0);
  EXPECT_LE(rel_err(r.sigma, pr.truth), 1e-3);
}

TEST(Pgd, MatchesLeastSquaresOracle) {
  const auto pr = make_problem(8, 4, 8, 8192, 0.0, 7, 0.5);
  const SymMatrix oracle = least_squares_oracle(pr.meas, pr.proj);
  ASSERT_GT(sym_eigendecompose(oracle).values.minCoeff(), 0.0);
  SolverConfig cfg;
  cfg.max_iters = 5000;
  cfg.tol_obj = 0.0;
  const SolveResult r = pgd_run({&pr.meas, &pr.proj, {}}, isotropic_init(pr.meas, pr.proj), cfg, 0);
  EXPECT_LE(rel_err(r.sigma, oracle), 1e-3);
  // Finite samples keep the oracle itself a few percent from the truth.
  EXPECT_LE(rel_err(oracle, pr.truth), 0.2);
}

TEST(Pgd, StartingAtTruthStopsImmediately) {
  const auto pr = make_problem(8, 4, 8, 64, 0.0, 8);
  const MeasurementSet meas = population_measurements(pr.truth, pr.proj);
  const SolveResult r = pgd_run({&meas, &pr.proj, {}}, pr.truth, SolverConfig{}, 0);
  EXPECT_LE(r.trace.rows.size(), 2u);
  EXPECT_EQ(r.trace.reason, StopReason::grad_tol);
  EXPECT_LE(rel_err(r.sigma, pr.truth), 1e-12);
}

TEST(Pgd, IteratesStayPsd) {
  const auto pr = make_problem(8, 3, 16, 256, 0.5, 9);
  Rng rng(10);
  const SymMatrix init = cgdm::test::random_sym(8, rng);
  const SolveResult r = pgd_run({&pr.meas, &pr.proj, {}}, init, SolverConfig{}, 0);
  ASSERT_FALSE(r.trace.min_eigenvalues.empty());
  for (double v : r.trace.min_eigenvalues) EXPECT_GE(v, -1e-9 * r.sigma.matrix().norm());
  EXPECT_GE(sym_eigendecompose(r.sigma).values.minCoeff(), -1e-9 * r.sigma.matrix().norm());
}

TEST(Pgd, IdentityObjectiveNonincreasing) {
  const auto pr = make_problem(8, 3, 16, 256, 0.2, 11);
  const SolveResult r = pgd_run({&pr.meas, &pr.proj, {0.1, Regularizer::frobenius_ridge}},
                                backprojection_init(pr.meas, pr.proj), SolverConfig{}, 0);
  double prev = r.trace.initial_objective;
  for (const TraceRow& row : r.trace.rows) {
    EXPECT_LE(row.objective, prev);
    prev = row.objective;
  }
  EXPECT_EQ(r.objective, prev);
}

TEST(Pgd, DiffusionReturnsBestSoFar) {
  const auto pr = make_problem(8, 3, 16, 256, 0.2, 12);
  const DiffusionSchedule s = build_schedule(8, 0.01, 0.3);
  SolverConfig cfg;
  cfg.max_iters = 40;
  cfg.preconditioner.kind = PreconditionerKind::diffusion;
  cfg.preconditioner.diffusion.schedule = &s;
  cfg.preconditioner.diffusion.predictor = junk_predictor(13, 8);
  const SymMatrix init = isotropic_init(pr.meas, pr.proj);
  const SolveResult r = pgd_run({&pr.meas, &pr.proj, {}}, init, cfg, 3);
  double best = r.trace.initial_objective;
  for (const TraceRow& row : r.trace.rows)
    if (row.lambda > 0.0) best = std::min(best, row.objective);
  EXPECT_EQ(r.objective, best);
  EXPECT_LE(r.objective, r.trace.initial_objective);
  EXPECT_EQ(r.objective, objective_value(r.sigma, pr.meas, pr.proj, {}));
}

TEST(Pgd, Deterministic) {
  const auto pr = make_problem(8, 3, 16, 256, 0.2, 14);
  const DiffusionSchedule s = build_schedule(8, 0.01, 0.3);
  SolverConfig cfg;
  cfg.max_iters = 20;
  cfg.preconditioner.kind = PreconditionerKind::diffusion;
  cfg.preconditioner.diffusion.schedule = &s;
  cfg.preconditioner.diffusion.predictor = [](const SymMatrix& x, int) { return SymMatrix(0.1 * x.matrix()); };
  const SymMatrix init = isotropic_init(pr.meas, pr.proj);
  const SolveResult a = pgd_run({&pr.meas, &pr.proj, {}}, init, cfg, 5);
  const SolveResult b = pgd_run({&pr.meas, &pr.proj, {}}, init, cfg, 5);
  EXPECT_EQ(a.sigma, b.sigma);
  ASSERT_EQ(a.trace.rows.size(), b.trace.rows.size());
  for (std::size_t i = 0; i < a.trace.rows.size(); ++i) {
    EXPECT_EQ(a.trace.rows[i].objective, b.trace.rows[i].objective);
    EXPECT_EQ(a.trace.rows[i].lambda, b.trace.rows[i].lambda);
  }
}

TEST(Pgd, DenoiseEveryReusesErrorEstimate) {
  const auto pr = make_problem(8, 3, 16, 256, 0.2, 15);
  const DiffusionSchedule s = build_schedule(8, 0.01, 0.3);
  int calls = 0;
  SolverConfig cfg;
  cfg.max_iters = 6;
  cfg.tol_obj = 0.0;
  cfg.denoise_every = 3;
  cfg.preconditioner.kind = PreconditionerKind::diffusion;
  cfg.preconditioner.diffusion.schedule = &s;
  cfg.preconditioner.diffusion.start_step = 2;
  cfg.preconditioner.diffusion.predictor = [&calls](const SymMatrix& x, int) {
    ++calls;
    return SymMatrix(0.1 * x.matrix());
  };
  const SolveResult r = pgd_run({&pr.meas, &pr.proj, {}}, isotropic_init(pr.meas, pr.proj), cfg, 0);
  ASSERT_EQ(r.trace.rows.size(), 6u);
  // Two reverse chains of two steps each.
  EXPECT_EQ(calls, 4);
}

TEST(Pgd, RejectsBadConfig) {
  const auto pr = make_problem(8, 3, 4, 64, 0.0, 16);
  SolverConfig cfg;
  cfg.armijo.c = 1.5;
  EXPECT_THROW(pgd_run({&pr.meas, &pr.proj, {}}, SymMatrix::identity(8), cfg, 0), ConfigError);
  EXPECT_THROW(pgd_run({nullptr, &pr.proj, {}}, SymMatrix::identity(8), SolverConfig{}, 0), ContractError);
}

TEST(Init, IsotropicMatchesScaledIdentity) {
  const auto pr = make_problem(8, 4, 8, 64, 0.0, 17);
  const MeasurementSet meas = population_measurements(SymMatrix(2.0 * Matrix::Identity(8, 8)), pr.proj);
  EXPECT_LE((isotropic_init(meas, pr.proj).matrix() - 2.0 * Matrix::Identity(8, 8)).norm(), 1e-12);
}

TEST(Init, BackprojectionIsPsd) {
  const auto pr = make_problem(8, 3, 16, 256, 1.0, 18);
  EXPECT_GE(sym_eigendecompose(backprojection_init(pr.meas, pr.proj)).values.minCoeff(), -1e-12);
}

TEST(Trace, CsvFormat) {
  SolveTrace t;
  t.rows.push_back({0, 2.5, 1.0, 0.5, 0.25, 3.0});
  t.rows.push_back({1, 1.5, 0.5, 0.25, 0.125, 2.0});
  const std::string csv = format_trace_csv(t);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "iter,objective,grad_norm,precond_grad_norm,lambda,millis");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 5);
  }
  EXPECT_EQ(rows, 2);
  EXPECT_EQ(csv.substr(csv.find('\n') + 1, 2), "0,");
}
