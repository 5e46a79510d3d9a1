#pragma once

#include "cgdm/data_model.hpp"
#include "cgdm/linalg.hpp"
#include "cgdm/objective.hpp"
#include "cgdm/rng.hpp"
#include "cgdm/sensing.hpp"

#include <cmath>
#include <vector>

namespace cgdm::test {

inline Matrix gaussian_matrix(Index r, Index c, Rng& rng) {
  Matrix a(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) a(i, j) = rng.normal();
  return a;
}

inline SymMatrix random_sym(Index n, Rng& rng) { return symmetrize(gaussian_matrix(n, n, rng)); }

inline SymMatrix random_psd(Index n, Rng& rng) {
  const Matrix g = gaussian_matrix(n, n, rng);
  return symmetrize(g * g.transpose() / static_cast<double>(n));
}

/// Small measured problem built directly from the data and sensing modules.
struct Problem {
  SymMatrix truth;
  DataMatrix data;
  PartitionPlan plan;
  ProjectionEnsemble proj;
  MeasurementSet meas;
};

inline Problem make_problem(Index l, Index m, int p, Index n, double sigma_n, std::uint64_t seed,
                            double rho = 0.9) {
  const Rng root(seed);
  Problem out;
  out.truth = synth_covariance({ToeplitzCovariance{rho}, l}, 0);
  out.data = sample_gaussian_data(out.truth, n, root.child(1).seed());
  out.plan = make_partitions(n, p, root.child(2).seed());
  out.proj = draw_projections({l, m, p, sigma_n}, root.child(3).seed());
  out.meas = measure_all(out.data, out.plan, out.proj, sigma_n, root.child(4).seed());
  return out;
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  double skew = 0.0;
  double excess_kurtosis = 0.0;
};

inline Moments moments(const std::vector<double>& v) {
  Moments m;
  const double n = static_cast<double>(v.size());
  for (double x : v) m.mean += x;
  m.mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : v) {
    const double d = x - m.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  m.var = m2;
  m.skew = m3 / std::pow(m2, 1.5);
  m.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  return m;
}

}  // namespace cgdm::test
