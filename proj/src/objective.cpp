#include "cgdm/objective.hpp"

#include "cgdm/errors.hpp"
#include "cgdm/parallel.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace cgdm {

namespace {

void check_dims(const SymMatrix& sigma, const MeasurementSet& meas, const ProjectionEnsemble& proj) {
  if (meas.count() != proj.count() || proj.count() == 0) {
    throw DimensionError("objective: " + std::to_string(meas.count()) + " measurements for " +
                         std::to_string(proj.count()) + " projections");
  }
  for (int i = 0; i < proj.count(); ++i) {
    const Matrix& p = proj.matrices[static_cast<std::size_t>(i)];
    if (p.rows() != sigma.dim() || meas.s_tilde[static_cast<std::size_t>(i)].dim() != p.cols()) {
      throw DimensionError("objective: partition " + std::to_string(i) + " has inconsistent shapes");
    }
  }
}

double pairwise_scalar(std::vector<double>& v) {
  if (v.empty()) return 0.0;
  for (std::size_t width = 1; width < v.size(); width *= 2)
    for (std::size_t i = 0; i + width < v.size(); i += 2 * width) v[i] += v[i + width];
  return v[0];
}

void add_regularizer_gradient(Matrix& g, const SymMatrix& sigma, const ObjectiveConfig& cfg) {
  if (cfg.psi == Regularizer::frobenius_ridge && cfg.tau != 0.0) g += 2.0 * cfg.tau * sigma.matrix();
}

// sum_i -2 P_i D_i P_i^T with D_i = targets_i - P_i^T Sigma P_i.
Matrix data_gradient(const SymMatrix& sigma, const std::vector<SymMatrix>& targets,
                     const ProjectionEnsemble& proj) {
  std::vector<Matrix> terms(targets.size());
  parallel_for(terms.size(), [&](std::size_t i) {
    const Matrix& p = proj.matrices[i];
    const Matrix d = targets[i].matrix() - p.transpose() * sigma.matrix() * p;
    terms[i] = -2.0 * (p * d * p.transpose());
  });
  return pairwise_sum(terms).matrix();
}

}  // namespace

void validate(const ObjectiveConfig& cfg) {
  if (!(cfg.tau >= 0.0) || !std::isfinite(cfg.tau)) throw ValidationError("objective: tau must be >= 0");
}

Provenance provenance_of(const SymMatrix& sigma) {
  // FNV-1a over the raw doubles.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const Matrix& a = sigma.matrix();
  for (Index k = 0; k < a.size(); ++k) {
    std::uint64_t bits;
    std::memcpy(&bits, a.data() + k, sizeof bits);
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (bits >> (8 * byte)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h ^ static_cast<std::uint64_t>(a.rows());
}

SymMatrix pairwise_sum(std::vector<Matrix>& terms) {
  if (terms.empty()) throw DimensionError("pairwise_sum: no terms");
  for (std::size_t width = 1; width < terms.size(); width *= 2)
    for (std::size_t i = 0; i + width < terms.size(); i += 2 * width) terms[i] += terms[i + width];
  return symmetrize(terms[0]);
}

double objective_value(const SymMatrix& sigma, const MeasurementSet& meas,
                       const ProjectionEnsemble& proj, const ObjectiveConfig& cfg) {
  check_dims(sigma, meas, proj);
  std::vector<double> terms(static_cast<std::size_t>(proj.count()));
  parallel_for(terms.size(), [&](std::size_t i) {
    const Matrix& p = proj.matrices[i];
    terms[i] = (meas.s_tilde[i].matrix() - p.transpose() * sigma.matrix() * p).squaredNorm();
  });
  double value = pairwise_scalar(terms);
  if (cfg.psi == Regularizer::frobenius_ridge) value += cfg.tau * sigma.matrix().squaredNorm();
  return value;
}

GradientSample gradient(const SymMatrix& sigma, const MeasurementSet& meas,
                        const ProjectionEnsemble& proj, const ObjectiveConfig& cfg) {
  check_dims(sigma, meas, proj);
  Matrix g = data_gradient(sigma, meas.s_tilde, proj);
  add_regularizer_gradient(g, sigma, cfg);
  return GradientSample{symmetrize(g), proj.count(), provenance_of(sigma), std::nullopt, std::nullopt};
}

GradientSample clean_gradient(const SymMatrix& sigma, const DataMatrix& full_data,
                              const ProjectionEnsemble& single_proj, const ObjectiveConfig& cfg,
                              double sigma_n) {
  if (single_proj.count() != 1) {
    throw ContractError("clean_gradient: expected a single projection, got " +
                        std::to_string(single_proj.count()));
  }
  if (full_data.bands() != sigma.dim()) throw DimensionError("clean_gradient: data/sigma dimension mismatch");
  GradientSample out =
      reference_gradient(sigma, sample_covariance(full_data), single_proj, cfg, sigma_n);
  return out;
}

GradientSample reference_gradient(const SymMatrix& sigma, const SymMatrix& full_sample_cov,
                                  const ProjectionEnsemble& proj, const ObjectiveConfig& cfg,
                                  double sigma_n) {
  if (full_sample_cov.dim() != sigma.dim() || proj.count() == 0 ||
      proj.matrices[0].rows() != sigma.dim()) {
    throw DimensionError("reference_gradient: dimension mismatch");
  }
  std::vector<SymMatrix> targets(static_cast<std::size_t>(proj.count()));
  const double noise = sigma_n * sigma_n;
  parallel_for(targets.size(), [&](std::size_t i) {
    const Matrix& p = proj.matrices[i];
    Matrix t = p.transpose() * full_sample_cov.matrix() * p;
    t.diagonal().array() += noise;
    targets[i] = symmetrize(t);
  });
  Matrix g = data_gradient(sigma, targets, proj);
  add_regularizer_gradient(g, sigma, cfg);
  return GradientSample{symmetrize(g), proj.count(), provenance_of(sigma), std::nullopt, std::nullopt};
}

SymMatrix gradient_error(const GradientSample& grad_p, const GradientSample& grad_clean) {
  if (grad_p.provenance != grad_clean.provenance) {
    throw ContractError("gradient_error: gradients were taken at different points");
  }
  if (grad_p.grad.dim() != grad_clean.grad.dim()) throw ContractError("gradient_error: dimension mismatch");
  return grad_p.grad - grad_clean.grad;
}

void attach_reference(GradientSample& noisy, const GradientSample& clean) {
  noisy.error_ref = gradient_error(noisy, clean);
  noisy.clean_ref = clean.grad;
}

SymMatrix analytic_gradient_error(const DataMatrix& data, const PartitionPlan& plan,
                                  const ProjectionEnsemble& proj) {
  if (proj.count() != plan.partitions) throw DimensionError("analytic_gradient_error: partition count mismatch");
  const Matrix s = sample_covariance(data).matrix();
  std::vector<Matrix> terms(static_cast<std::size_t>(plan.partitions));
  parallel_for(terms.size(), [&](std::size_t i) {
    const Matrix x = gather_block(data, plan.index_sets[i]);
    const Matrix r = x * x.transpose() / static_cast<double>(x.cols()) - s;
    const Matrix& p = proj.matrices[i];
    const Matrix ppt = p * p.transpose();
    terms[i] = -2.0 * (ppt * r * ppt);
  });
  return pairwise_sum(terms);
}

}  // namespace cgdm
