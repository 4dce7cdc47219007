#pragma once

// Mini-batch training of every model parameter by maximizing the ELBO
// (minimizing its negation) with Adam.

#include "nekf/dataset.hpp"
#include "nekf/elbo.hpp"
#include "nekf/optimizer.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nekf {

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double alpha = 0.5;
  std::uint64_t seed = 0;
  double gradient_clip = 10.0;  // global norm; <= 0 disables
  std::size_t checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
  unsigned threads = 0;              // 0: NEURAL_EKF_THREADS, else all cores
  double jitter = kDefaultJitter;

  /// Throws ContractError naming the offending field.
  void validate() const;
};

/// Per-sequence means of the negated objective and of its three terms.
struct LossStats {
  double loss = 0.0;  // -(alpha*recon + (1-alpha)*overshoot - kl)
  double reconstruction = 0.0;
  double overshoot = 0.0;
  double kl = 0.0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  LossStats mean;
};

/// Everything needed to continue training or to predict.
struct TrainState {
  ModelSpec spec;
  ModelParams params;
  AdamState adam;
  std::size_t epoch = 0;  // completed epochs
  std::vector<EpochStats> history;
  std::optional<Normalization> normalization;
  std::string config_json = "{}";  // resolved run configuration, echoed into checkpoints

  static TrainState initialize(const ModelSpec& spec, std::uint64_t seed,
                               const InitOptions& opts = {});
};

/// Non-finite loss or gradient, or a failed inference step, during training.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& cause, std::size_t epoch, std::size_t batch,
                  std::vector<std::pair<std::string, double>> parameter_norms);
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }
  const std::vector<std::pair<std::string, double>>& parameter_norms() const noexcept {
    return norms_;
  }

 private:
  std::size_t epoch_;
  std::size_t batch_;
  std::vector<std::pair<std::string, double>> norms_;
};

/// Worker count: `requested` if positive, else NEURAL_EKF_THREADS, else the
/// number of hardware threads.
unsigned resolve_threads(unsigned requested);

struct BatchEvaluation {
  LossStats mean;
  std::vector<Matrix> gradients;  // of the mean negated objective, in tensors() order
};

/// Loss (and optionally gradients) averaged over `members`. Each member is
/// evaluated on its own tape; results are reduced in member order so the
/// outcome does not depend on the thread count.
BatchEvaluation evaluate_batch(const ModelSpec& spec, const ModelParams& params,
                               const std::vector<const Trajectory*>& members, double alpha,
                               double jitter, bool with_gradients, unsigned threads);

LossStats evaluate_loss(const ModelSpec& spec, const ModelParams& params,
                        const std::vector<Trajectory>& data, double alpha,
                        double jitter = kDefaultJitter, unsigned threads = 1);

/// Epoch-seeded shuffle of 0..n-1.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

using EpochCallback = std::function<void(const TrainState&, const EpochStats&)>;

/// Runs `cfg.epochs` further epochs, continuing the epoch count, optimizer
/// moments and shuffling sequence stored in `state`.
void train(TrainState& state, const std::vector<Trajectory>& data, const TrainConfig& cfg,
           const EpochCallback& on_epoch = {});

}  // namespace nekf
