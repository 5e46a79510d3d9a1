#include "cgdm/sensing.hpp"

#include "cgdm/errors.hpp"
#include "cgdm/parallel.hpp"
#include "cgdm/rng.hpp"

#include <cmath>
#include <string>

namespace cgdm {

void validate(const SensingConfig& cfg) {
  if (cfg.l < 1 || cfg.m < 1) throw ValidationError("sensing: l and m must be >= 1");
  if (cfg.m >= cfg.l) throw ValidationError("sensing: m must be smaller than l");
  if (cfg.p < 1) throw ValidationError("sensing: p must be >= 1");
  if (!(cfg.sigma_n >= 0.0) || !std::isfinite(cfg.sigma_n)) {
    throw ValidationError("sensing: sigma_N must be finite and >= 0");
  }
}

ProjectionEnsemble draw_projections(const SensingConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  ProjectionEnsemble out;
  out.matrices.resize(static_cast<std::size_t>(cfg.p));
  const Rng root(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.m));
  parallel_for(out.matrices.size(), [&](std::size_t i) {
    Rng rng = root.child(i);
    Matrix p(cfg.l, cfg.m);
    for (int attempt = 0; attempt < kMaxProjectionRedraws; ++attempt) {
      for (Index c = 0; c < cfg.m; ++c)
        for (Index r = 0; r < cfg.l; ++r) p(r, c) = rng.normal() * scale;
      if (min_singular_value(p) > kMinProjectionSingular) {
        out.matrices[i] = std::move(p);
        return;
      }
    }
    throw GenerationError("draw_projections: matrix " + std::to_string(i) +
                          " stayed rank deficient after redraws");
  });
  return out;
}

Matrix measure_partition(const Matrix& x_block, const Matrix& projection, double sigma_n,
                         std::uint64_t seed) {
  if (x_block.rows() != projection.rows()) {
    throw DimensionError("measure_partition: data has " + std::to_string(x_block.rows()) +
                         " rows, projection has " + std::to_string(projection.rows()));
  }
  Matrix y = projection.transpose() * x_block;
  if (sigma_n > 0.0) {
    Rng rng(seed);
    for (Index j = 0; j < y.cols(); ++j)
      for (Index i = 0; i < y.rows(); ++i) y(i, j) += sigma_n * rng.normal();
  }
  return y;
}

SymMatrix compressed_sample_cov(const Matrix& y) {
  if (y.cols() < 1 || y.rows() < 1) throw DimensionError("compressed_sample_cov: empty block");
  Matrix s = Matrix::Zero(y.rows(), y.rows());
  s.selfadjointView<Eigen::Lower>().rankUpdate(y);
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  s /= static_cast<double>(y.cols());
  return SymMatrix(std::move(s));
}

MeasurementSet measure_all(const DataMatrix& data, const PartitionPlan& plan,
                           const ProjectionEnsemble& proj, double sigma_n, std::uint64_t seed) {
  if (proj.count() != plan.partitions) {
    throw DimensionError("measure_all: " + std::to_string(proj.count()) + " projections for " +
                         std::to_string(plan.partitions) + " partitions");
  }
  MeasurementSet out;
  out.block_size = plan.block_size;
  out.s_tilde.resize(static_cast<std::size_t>(plan.partitions));
  const Rng root(seed);
  parallel_for(out.s_tilde.size(), [&](std::size_t i) {
    const Matrix x = gather_block(data, plan.index_sets[i]);
    const Matrix y = measure_partition(x, proj.matrices[i], sigma_n, root.child(i).seed());
    out.s_tilde[i] = compressed_sample_cov(y);
  });
  return out;
}

std::vector<Tensor> projections_to_tensors(const ProjectionEnsemble& proj) {
  std::vector<Tensor> out;
  out.reserve(proj.matrices.size());
  for (std::size_t i = 0; i < proj.matrices.size(); ++i) {
    const Matrix& p = proj.matrices[i];
    Tensor t{"P/" + std::to_string(i), {p.rows(), p.cols()}, {}};
    t.values.reserve(static_cast<std::size_t>(p.size()));
    for (Index r = 0; r < p.rows(); ++r)
      for (Index c = 0; c < p.cols(); ++c) t.values.push_back(p(r, c));
    out.push_back(std::move(t));
  }
  return out;
}

ProjectionEnsemble projections_from_tensors(const std::vector<Tensor>& tensors) {
  ProjectionEnsemble out;
  for (std::size_t i = 0;; ++i) {
    const std::string name = "P/" + std::to_string(i);
    const Tensor* t = nullptr;
    for (const Tensor& cand : tensors)
      if (cand.name == name) t = &cand;
    if (t == nullptr) break;
    if (t->shape.size() != 2) throw FormatError("projection " + name + ": expected rank 2");
    Matrix p(t->shape[0], t->shape[1]);
    for (Index r = 0; r < p.rows(); ++r)
      for (Index c = 0; c < p.cols(); ++c) p(r, c) = t->values[static_cast<std::size_t>(r * p.cols() + c)];
    if (!out.matrices.empty() && (p.rows() != out.matrices[0].rows() || p.cols() != out.matrices[0].cols())) {
      throw FormatError("projection " + name + ": shape differs from P/0");
    }
    out.matrices.push_back(std::move(p));
  }
  if (out.matrices.empty()) throw FormatError("projection container holds no P/0");
  return out;
}

void save_projections(const ProjectionEnsemble& proj, const std::filesystem::path& path) {
  write_container(path, projections_to_tensors(proj));
}

ProjectionEnsemble load_projections(const std::filesystem::path& path) {
  return projections_from_tensors(read_container(path));
}

}  // namespace cgdm
