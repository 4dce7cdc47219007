#pragma once

// Observation predictions from a trained model: open-loop rollout, or the
// filtered or smoothed posterior pushed through the observation model.

#include "nekf/dataset.hpp"
#include "nekf/model.hpp"

#include <string>

namespace nekf {

enum class PredictMode { Rollout, Filtered, Smoothed };

PredictMode parse_predict_mode(const std::string& name);
std::string to_string(PredictMode m);

/// Per-row predictive means and per-channel variances (T x d_x), in the units
/// the model was trained in.
struct Prediction {
  Matrix mean;
  Matrix variance;
};

/// Rollout starts from the smoothed t = 0 marginal given the first
/// `init_steps` rows (the prior initial belief when zero) and is then driven
/// by the inputs alone for all T rows. Filtered and smoothed modes use
/// N(g(mu), C Sigma C^T + R) at each posterior marginal.
Prediction predict(const ModelSpec& spec, const ModelParams& params, const Trajectory& traj,
                   PredictMode mode, Index init_steps = 0, double jitter = kDefaultJitter);

/// `predict` mapped back to physical units when `norm` is given.
Prediction predict_physical(const ModelSpec& spec, const ModelParams& params,
                            const Trajectory& traj, PredictMode mode, Index init_steps,
                            const Normalization* norm, double jitter = kDefaultJitter);

}  // namespace nekf
