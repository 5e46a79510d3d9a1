#pragma once

#include "cgdm/data_model.hpp"
#include "cgdm/denoiser.hpp"
#include "cgdm/diffusion.hpp"
#include "cgdm/eval_report.hpp"
#include "cgdm/objective.hpp"
#include "cgdm/optimizer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace cgdm {

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "run";
  unsigned threads = 0;

  CovarianceSpec cov;
  std::uint64_t cov_seed = 0;
  int rows = 64;
  int cols = 64;

  Index m = 9;
  int p = 256;
  double sigma_n_rel = 0.01;  // sigma_N = sigma_n_rel * sqrt(trace(Sigma) / l)

  ObjectiveConfig objective;

  bool diffusion_enabled = true;
  int T = 64;
  double p_min = 2;
  double p_max = 1024;
  std::vector<int> levels;  // partition counts measured for calibration and training
  int instances_per_level = 3;
  int draws_per_instance = 5;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  int records = 12000;
  int pool_per_level = 6;
  double rho_min = 0.8;
  double rho_max = 0.95;
  double wishart_min = 1e-3;
  double wishart_max = 0.3;

  TrainHyper hyper;
  double holdout = 0.1;
  int checkpoint_every = 500;
  double gaussian_sigma = 1.0;

  std::string method = "identity";
  InitKind init = InitKind::isotropic;
  SolverConfig solver;
  int start_step = 0;
  bool zero_sigma = false;

  int eval_seeds = 10;
  std::uint64_t eval_seed_base = 1000;
  double cos_threshold = 0.9;
  bool heatmaps = true;

  nlohmann::json document;

  Index l() const { return cov.dim; }
  Index n() const { return static_cast<Index>(rows) * cols; }
};

nlohmann::json default_config_json();
/// Applies "a.b.c=value"; value is parsed as JSON, else taken as a string.
/// Unknown keys throw ConfigError.
void apply_override(nlohmann::json& doc, const std::string& assignment);
/// Defaults merged with `doc`; unknown keys throw ConfigError.
RunConfig config_from_json(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path* path, const std::vector<std::string>& overrides);

/// Cross-field checks; throws ValidationError.
void validate(const RunConfig& cfg);

double sigma_n_for(const RunConfig& cfg, const SymMatrix& truth);

// Artifact locations under cfg.out.
struct Paths {
  std::filesystem::path cube, sigma_true, schedule, weights, checkpoint, train_log, train_summary, projections,
      report, summary, heatmaps;
  std::filesystem::path estimate(const std::string& method) const;
  std::filesystem::path trace(const std::string& method) const;
  std::filesystem::path dir;
};
Paths paths_for(const RunConfig& cfg);

/// Synthetic training instances: jittered Toeplitz covariances with seeds
/// disjoint from the evaluation seeds, grouped by partition count.
struct PoolInstance {
  SymMatrix truth;
  Instance inst;
  SymMatrix iso;
  double sigma_n = 0.0;
};
using InstancePool = std::map<int, std::vector<PoolInstance>>;
InstancePool build_pool(const RunConfig& cfg);

/// Random iterate near an instance: P_D(S* + u (iso - S*) + s (W W^T / d - I)).
SymMatrix sample_iterate(const PoolInstance& pi, double wishart_min, double wishart_max, Rng& rng);

struct NoiseStats {
  std::vector<ErrorStat> per_level;
  double scale_c = 0.0;
  PowerLaw law;
};
NoiseStats measure_noise(const RunConfig& cfg, const InstancePool& pool);
DiffusionSchedule schedule_from_stats(const RunConfig& cfg, const NoiseStats& stats);

TrainingSet build_training_set(const RunConfig& cfg, const InstancePool& pool, const DiffusionSchedule& schedule);

/// Residual of the Gaussian blur read as a noise estimate:
/// (x_k - G x_k) / sqrt(1 - alpha_bar_k).
SymMatrix gaussian_noise_prediction(const SymMatrix& x_k, int k, const DiffusionSchedule& schedule, double sigma);

struct TrainSummary {
  double val_loss = 0.0;
  double zero_loss = 0.0;
  double val_loss_top = 0.0;   // held-out records at k = T
  double zero_loss_top = 0.0;
  double gauss_loss_top = 0.0;
  std::size_t top_count = 0;
};
TrainSummary evaluate_denoiser(const TrainingSet& held_out, const UNetParams& params,
                               const DiffusionSchedule& schedule, double gaussian_sigma);

std::vector<MethodSpec> comparison_methods(const RunConfig& cfg, const DiffusionSchedule* schedule,
                                           const UNetParams* params);
Scenario comparison_scenario(const RunConfig& cfg);
SolverConfig solver_for(const RunConfig& cfg, const std::string& method, const DiffusionSchedule* schedule,
                        const UNetParams* params);

using Log = std::function<void(const std::string&)>;

void cmd_synth(const RunConfig& cfg, const Log& log);
void cmd_calibrate(const RunConfig& cfg, const Log& log);
void cmd_train(const RunConfig& cfg, const Log& log);
void cmd_estimate(const RunConfig& cfg, const Log& log);
void cmd_compare(const RunConfig& cfg, const Log& log);

}  // namespace cgdm
