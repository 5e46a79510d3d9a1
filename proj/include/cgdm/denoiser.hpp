#pragma once

#include "cgdm/container.hpp"
#include "cgdm/diffusion.hpp"
#include "cgdm/errors.hpp"
#include "cgdm/linalg.hpp"
#include "cgdm/unet.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace cgdm {

/// One forward-process pair: normalized clean gradient, normalized noise, step.
struct TrainingRecord {
  SymMatrix x0;
  SymMatrix eps;
  int k = 1;
};

struct TrainingSet {
  std::vector<TrainingRecord> records;

  std::vector<std::size_t> counts_per_step(int T) const;
};

/// Throws ValidationError unless every k lies in 1..T and all matrices share one size.
void validate(const TrainingSet& set, int T);

// Container names "x0/i", "eps/i" (shape [l, l]) and "k/i" (shape [1]).
std::vector<Tensor> training_set_to_tensors(const TrainingSet& set);
TrainingSet training_set_from_tensors(const std::vector<Tensor>& tensors);
void save_training_set(const TrainingSet& set, const std::filesystem::path& path);
TrainingSet load_training_set(const std::filesystem::path& path);

/// x_k = sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps.
Matrix noised_input(const TrainingRecord& r, const DiffusionSchedule& schedule);

/// Mean over records of ||eps - eps_theta(x_k, k)||_F^2.
double loss_simple(const std::vector<const TrainingRecord*>& batch, const UNetParams& params,
                   const DiffusionSchedule& schedule);
double loss_simple(const TrainingSet& set, const UNetParams& params, const DiffusionSchedule& schedule);

/// Same loss for the zero predictor, i.e. mean ||eps||_F^2.
double zero_predictor_loss(const TrainingSet& set);

/// Loss and parameter gradient on a batch.
double loss_and_gradient(const std::vector<const TrainingRecord*>& batch, const UNetParams& params,
                         const DiffusionSchedule& schedule, UNetParams& grads);

struct TrainHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 32;
  int steps = 3000;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  UNetArch arch;
};

/// Adam moments and position in the run; enough to resume bit-exactly.
struct TrainState {
  UNetParams params;
  UNetParams m;
  UNetParams v;
  int step = 0;
};

std::vector<Tensor> train_state_to_tensors(const TrainState& state);
TrainState train_state_from_tensors(const std::vector<Tensor>& tensors);

struct TrainResult {
  TrainState state;
  std::vector<double> loss_log;  // one training-batch loss per step taken in this call
};

class TrainingError : public NumericalError {
 public:
  TrainingError(const std::string& what, UNetParams last_valid, int step)
      : NumericalError(what), last_valid_(std::move(last_valid)), step_(step) {}
  const UNetParams& last_valid() const noexcept { return last_valid_; }
  int step() const noexcept { return step_; }

 private:
  UNetParams last_valid_;
  int step_;
};

/// Adam with cosine learning-rate decay and global-norm clipping. Batch
/// indices at step t come from child stream t of hyper.seed, so resuming from
/// a checkpoint continues the same trajectory. `stop_after` ends the call
/// early (at that absolute step) without changing the schedule.
TrainResult train(const TrainingSet& train_set, const DiffusionSchedule& schedule, const TrainHyper& hyper,
                  std::optional<TrainState> resume = std::nullopt, std::optional<int> stop_after = std::nullopt);

/// Deterministic split: the last `fraction` of records (rounded down, at
/// least one) become the held-out set.
std::pair<TrainingSet, TrainingSet> split_holdout(const TrainingSet& set, double fraction);

std::vector<Tensor> params_to_tensors(const UNetParams& params, const std::string& prefix = "");
/// Architecture is inferred from the tensor shapes.
UNetParams params_from_tensors(const std::vector<Tensor>& tensors, const std::string& prefix = "");
void save_params(const UNetParams& params, const std::filesystem::path& path);
UNetParams load_params(const std::filesystem::path& path);

/// Separable Gaussian blur of the matrix as an image: kernel radius
/// ceil(3 sigma), half-sample symmetric ("reflect") padding, normalized
/// weights; the result is symmetrized.
SymMatrix gaussian_filter_precondition(const SymMatrix& g, double kernel_sigma);

}  // namespace cgdm
