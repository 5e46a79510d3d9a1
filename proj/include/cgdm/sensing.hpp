#pragma once

#include "cgdm/container.hpp"
#include "cgdm/data_model.hpp"
#include "cgdm/linalg.hpp"

#include <cstdint>
#include <vector>

namespace cgdm {

struct SensingConfig {
  Index l = 32;
  Index m = 9;
  int p = 256;
  double sigma_n = 0.0;
};

void validate(const SensingConfig& cfg);

/// p projection matrices P_i (l x m), entries i.i.d. N(0, 1/m).
struct ProjectionEnsemble {
  std::vector<Matrix> matrices;

  int count() const noexcept { return static_cast<int>(matrices.size()); }
};

/// Compressed sample covariances S~_i = (1/b) Y_i Y_i^T, one per partition.
struct MeasurementSet {
  std::vector<SymMatrix> s_tilde;
  Index block_size = 0;

  int count() const noexcept { return static_cast<int>(s_tilde.size()); }
};

inline constexpr int kMaxProjectionRedraws = 10;
inline constexpr double kMinProjectionSingular = 1e-8;

/// Matrix i comes from child stream i of `seed` and is redrawn (from the same
/// stream) until its smallest singular value exceeds 1e-8.
ProjectionEnsemble draw_projections(const SensingConfig& cfg, std::uint64_t seed);

/// Y = P^T X + N, N i.i.d. N(0, sigma_n^2).
Matrix measure_partition(const Matrix& x_block, const Matrix& projection, double sigma_n,
                         std::uint64_t seed);

SymMatrix compressed_sample_cov(const Matrix& y);

/// Measures every block of `plan` with its own projection; partition i uses
/// child stream i of `seed` for its sensing noise.
MeasurementSet measure_all(const DataMatrix& data, const PartitionPlan& plan,
                           const ProjectionEnsemble& proj, double sigma_n, std::uint64_t seed);

/// Tensors "P/0" ... "P/{p-1}", each shaped [l, m].
std::vector<Tensor> projections_to_tensors(const ProjectionEnsemble& proj);
ProjectionEnsemble projections_from_tensors(const std::vector<Tensor>& tensors);

void save_projections(const ProjectionEnsemble& proj, const std::filesystem::path& path);
ProjectionEnsemble load_projections(const std::filesystem::path& path);

}  // namespace cgdm
