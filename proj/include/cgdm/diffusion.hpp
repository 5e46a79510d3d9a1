#pragma once

#include "cgdm/linalg.hpp"
#include "cgdm/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace cgdm {

/// Steps are numbered k = 1..T; vectors are stored 0-based (entry k-1).
struct DiffusionSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;
  std::vector<int> partition_of_step;
  double scale_c = 1.0;

  double beta_at(int k) const { return beta.at(static_cast<std::size_t>(k - 1)); }
  double alpha_at(int k) const { return alpha.at(static_cast<std::size_t>(k - 1)); }
  double alpha_bar_at(int k) const { return alpha_bar.at(static_cast<std::size_t>(k - 1)); }
  double sigma_at(int k) const { return sigma.at(static_cast<std::size_t>(k - 1)); }
  int partitions_at(int k) const { return partition_of_step.at(static_cast<std::size_t>(k - 1)); }
};

/// Builds alpha, alpha_bar and sigma (= sqrt(beta)) from beta and checks every
/// schedule invariant. Throws ValidationError on violation.
DiffusionSchedule schedule_from_beta(std::vector<double> beta, std::vector<int> partition_of_step,
                                     double scale_c);

/// Linear beta from beta_start to beta_end. partition_of_step defaults to k.
DiffusionSchedule build_schedule(int T, double beta_start, double beta_end);

struct NoisyGradient {
  SymMatrix value;
  int step = 0;
  double scale = 1.0;
};

/// Symmetric Gaussian matrix with unit variance in every entry: diagonal G_ii,
/// off-diagonal (G_ij + G_ji) / sqrt(2).
SymMatrix symmetric_noise(Index dim, Rng& rng);

NoisyGradient forward_step(const NoisyGradient& x_prev, int k, const DiffusionSchedule& schedule,
                           std::uint64_t seed);

NoisyGradient forward_marginal(const NoisyGradient& x0, int k, const DiffusionSchedule& schedule,
                               std::uint64_t seed);
/// Same, with the injected noise supplied by the caller.
NoisyGradient forward_marginal_with(const NoisyGradient& x0, int k, const DiffusionSchedule& schedule,
                                    const SymMatrix& eps);

/// One entry of measured partition noise: partition count and the per-entry
/// standard deviation of the gradient error at that count.
struct ErrorStat {
  double p = 0.0;
  double std = 0.0;
};

/// One step per stat: alpha_bar_k = 1 / (1 + (std_k / c)^2), so that
/// sqrt((1 - alpha_bar_k) / alpha_bar_k) * c equals std_k. Throws
/// CalibrationError unless p and std are both strictly increasing and positive.
DiffusionSchedule calibrate_schedule(const std::vector<ErrorStat>& stats, double scale_c);

/// Least-squares fit of log std = log a + gamma log p.
struct PowerLaw {
  double a = 1.0;
  double gamma = 0.0;
  double operator()(double p) const;
};
PowerLaw fit_power_law(const std::vector<ErrorStat>& stats);

/// T points p_k geometrically spaced on [p_min, p_max] with std from the fit.
std::vector<ErrorStat> geometric_grid(const PowerLaw& law, double p_min, double p_max, int T);

/// Step whose partition count is closest to p on a log scale.
int step_for_partitions(const DiffusionSchedule& schedule, double p);

/// 1.4826 * median |v|.
double robust_scale(std::vector<double> values);

using NoisePredictor = std::function<SymMatrix(const SymMatrix& x, int k)>;

struct ReverseOptions {
  int start_step = 0;  // 0 means T
  bool zero_sigma = false;
};

/// x_{k-1} = (x_k - (1 - alpha_k) / sqrt(1 - alpha_bar_k) eps(x_k, k)) / sqrt(alpha_k) + sigma_k z,
/// z = 0 at k = 1, for k = start..1. Every iterate is symmetrized.
NoisyGradient reverse_sample(const NoisyGradient& x_start, const DiffusionSchedule& schedule,
                             const NoisePredictor& eps_model, std::uint64_t seed,
                             const ReverseOptions& options = {});

// {"T":..,"beta":[..],"scale_c":..,"partition_of_step":[..]}
std::string encode_schedule(const DiffusionSchedule& schedule);
DiffusionSchedule decode_schedule(std::string_view text);
void save_schedule(const DiffusionSchedule& schedule, const std::filesystem::path& path);
DiffusionSchedule load_schedule(const std::filesystem::path& path);

}  // namespace cgdm
