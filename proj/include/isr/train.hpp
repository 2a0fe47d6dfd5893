#pragma once

#include "isr/flows.hpp"

#include <functional>
#include <stdexcept>
#include <vector>

namespace isr {

struct TrainConfig {
  Index batch = 64;
  int epochs = 500;
  double lr_start = 1e-2;
  double lr_end = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Sparsity weight; 0 disables the regularisation phases and pruning.
  double lambda = 0.0;
  double l05_threshold = 0.05;
  /// Phase boundaries as fractions of the epoch budget:
  /// [0, warmup) no penalty, [warmup, ramp) linear ramp, [ramp, prune) full
  /// penalty, prune: hard threshold, then fine-tune without penalty.
  double warmup_frac = 0.2;
  double ramp_frac = 0.4;
  double prune_frac = 0.8;
  double prune_tol = 0.01;
  /// Rescales the whole gradient to this L2 norm when larger; 0 disables.
  double grad_clip = 0.0;
  /// Rescales the gradient to this multiple of the running mean of past
  /// (clipped) gradient norms when larger; 0 disables.
  double grad_clip_factor = 0.0;

  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Geometric decay from lr_start at step 0 to lr_end at total_steps - 1.
double lr_at(const TrainConfig& cfg, long step, long total_steps);

/// One bias-corrected Adam update in place. masks (optional) pin entries
/// whose mask is 0 at exactly zero.
void adam_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, AdamState& state,
               double lr, const TrainConfig& cfg, const std::vector<Matrix>* masks = nullptr);

/// Sparsity weight in effect during the given epoch.
double lambda_at(const TrainConfig& cfg, int epoch);

struct Dataset {
  Matrix x;
  Matrix y;  // zero columns for flows
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;     // mean batch NLL (without sparsity term)
  double penalty = 0.0;  // L0.5 sum over all subnet weights at epoch end
  double lambda = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
};

struct TrainResult {
  Model model;
  TrainHistory history;
  std::size_t pruned = 0;
};

/// Thrown when a loss or gradient turns non-finite; carries the model as it
/// was at the start of the failing epoch.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, Model last_good, int epoch)
      : std::runtime_error(what), last_good_(std::move(last_good)), epoch_(epoch) {}
  const Model& last_good() const { return last_good_; }
  int epoch() const { return epoch_; }

 private:
  Model last_good_;
  int epoch_;
};

using EpochCallback = std::function<void(const Model&, const EpochRecord&)>;

/// Sum of L0.5 penalties over every subnetwork of the stack.
double model_penalty(const Model& m, double threshold);
/// Zeroes every |w| < tol in every subnetwork; returns the count.
std::size_t prune_model(Model& m, double tol);

TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace isr
