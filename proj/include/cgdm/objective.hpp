#pragma once

#include "cgdm/data_model.hpp"
#include "cgdm/linalg.hpp"
#include "cgdm/sensing.hpp"

#include <cstdint>
#include <optional>

namespace cgdm {

enum class Regularizer { none, frobenius_ridge };

struct ObjectiveConfig {
  double tau = 0.0;
  Regularizer psi = Regularizer::none;
};

void validate(const ObjectiveConfig& cfg);

/// Identifies the point a gradient was taken at: a hash of the bytes of sigma.
using Provenance = std::uint64_t;
Provenance provenance_of(const SymMatrix& sigma);

struct GradientSample {
  SymMatrix grad;
  int partition_count = 0;
  Provenance provenance = 0;
  std::optional<SymMatrix> clean_ref;
  std::optional<SymMatrix> error_ref;
};

/// sum_i ||S~_i - P_i^T Sigma P_i||_F^2 + tau psi(Sigma), summed over
/// partitions with a fixed pairwise tree.
double objective_value(const SymMatrix& sigma, const MeasurementSet& meas,
                       const ProjectionEnsemble& proj, const ObjectiveConfig& cfg);

/// sum_i -2 P_i (S~_i - P_i^T Sigma P_i) P_i^T + tau grad psi(Sigma), symmetrized.
GradientSample gradient(const SymMatrix& sigma, const MeasurementSet& meas,
                        const ProjectionEnsemble& proj, const ObjectiveConfig& cfg);

/// Single-partition reference: S~ is formed from all n samples through the one
/// projection, with the sensing noise replaced by its expectation sigma_n^2 I.
/// Throws ContractError unless single_proj holds exactly one matrix.
GradientSample clean_gradient(const SymMatrix& sigma, const DataMatrix& full_data,
                              const ProjectionEnsemble& single_proj, const ObjectiveConfig& cfg,
                              double sigma_n = 0.0);

/// Pooled reference used for error measurement and training: the same p
/// projections as the noisy gradient, with every S~_i replaced by
/// P_i^T S P_i + sigma_n^2 I where S is the sample covariance of all n
/// samples. The partition-specific fluctuation is all that differs.
GradientSample reference_gradient(const SymMatrix& sigma, const SymMatrix& full_sample_cov,
                                  const ProjectionEnsemble& proj, const ObjectiveConfig& cfg,
                                  double sigma_n);

/// grad_p - grad_clean. Throws ContractError when the provenance tokens or
/// dimensions differ.
SymMatrix gradient_error(const GradientSample& grad_p, const GradientSample& grad_clean);

/// Fills clean_ref and error_ref of `noisy` from `clean`.
void attach_reference(GradientSample& noisy, const GradientSample& clean);

/// Diagnostic form -2 sum_i P_i P_i^T R_i P_i P_i^T with R_i = S_i - S, where
/// S_i is the sample covariance of block i and S that of all samples.
/// Equals the operational error when sigma_n = 0.
SymMatrix analytic_gradient_error(const DataMatrix& data, const PartitionPlan& plan,
                                  const ProjectionEnsemble& proj);

/// Pairwise (tree) sum of terms, independent of thread count.
SymMatrix pairwise_sum(std::vector<Matrix>& terms);

}  // namespace cgdm
