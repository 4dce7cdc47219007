#pragma once

// Extended Kalman filtering, Rauch-Tung-Striebel smoothing and open-loop
// rollout over tape quantities.
//
// Time convention: a trajectory is a pair of row-aligned matrices with T rows.
// Row k (0-based) holds the input u_k and the observation x_{k+1}; that is,
// the input in a row drives the transition into the state observed in the same
// row: z_{t} = f(z_{t-1}, u_{t-1}), x_t = g(z_t), t = 1..T. The model has no
// built-in time step; data must be sampled at the rate the model was trained
// on.

#include "nekf/gaussian.hpp"
#include "nekf/model.hpp"

#include <vector>

namespace nekf {

struct StepResult {
  Gaussian belief;
  ad::Var jacobian;  // A for predict (at the prior mean), C for update (at the predicted mean)
};

/// N(f(mu, u), A Sigma A^T + Q).
StepResult predict_step(const Gaussian& prior, const ad::Var& u, const TransitionModel& f,
                        const ad::Var& q, double jitter = kDefaultJitter);

/// Kalman update with gain Sigma C^T (C Sigma C^T + R)^{-1} obtained by an SPD
/// solve and covariance (I - K C) Sigma.
StepResult update_step(const Gaussian& predicted, const ad::Var& x, const ObservationModel& g,
                       const ad::Var& r, double jitter = kDefaultJitter);

struct FilterTrace {
  Gaussian initial;                  // (mu_{0|0}, Sigma_{0|0})
  std::vector<Gaussian> predicted;   // [t-1] = (mu_{t|t-1}, Sigma_{t|t-1})
  std::vector<Gaussian> filtered;    // [t-1] = (mu_{t|t}, Sigma_{t|t})
  std::vector<ad::Var> jacobians_a;  // [t-1] = df/dz at mu_{t-1|t-1}
  std::vector<ad::Var> jacobians_c;  // [t-1] = dg/dz at mu_{t|t-1}

  std::size_t length() const { return filtered.size(); }
  /// Filtered marginal at time t = 0..T (t = 0 is the initial belief).
  const Gaussian& at(std::size_t t) const { return t == 0 ? initial : filtered[t - 1]; }
};

struct SmoothedTrace {
  std::vector<Gaussian> smoothed;  // [t] = (mu_{t|T}, Sigma_{t|T}), t = 0..T
  std::vector<ad::Var> gains;      // [t] = smoother gain K_t^s, t = 0..T-1
};

FilterTrace filter(const Matrix& inputs, const Matrix& observations, const TransitionModel& f,
                   const ObservationModel& g, const ad::Var& q, const ad::Var& r,
                   const Gaussian& init, double jitter = kDefaultJitter);

/// Backward recursion reusing the transition Jacobians recorded by the filter.
SmoothedTrace rts_smooth(const FilterTrace& trace, double jitter = kDefaultJitter);

struct RolloutStep {
  Gaussian state;        // q-bar(z_t)
  Gaussian observation;  // N(g(mu-bar_t), C Sigma-bar_t C^T + R)
};

/// Open-loop generative prediction from `init` driven by `inputs` (T rows).
std::vector<RolloutStep> rollout(const Gaussian& init, const Matrix& inputs,
                                 const TransitionModel& f, const ObservationModel& g,
                                 const ad::Var& q, const ad::Var& r,
                                 double jitter = kDefaultJitter);

/// Column vector of row `t` of `m`, as a tape constant.
ad::Var row_constant(ad::Tape& tape, const Matrix& m, Index t);

}  // namespace nekf
