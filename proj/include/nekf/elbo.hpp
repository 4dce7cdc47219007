#pragma once

// Closed-form evidence lower bound of one trajectory, assembled from the
// smoothed posteriors and the open-loop rollout started at the smoothed
// initial state.

#include "nekf/ekf.hpp"

namespace nekf {

struct LossBreakdown {
  ad::Var reconstruction;  // sum_t log N(x_t; g(mu_{t|T}), C Sigma_{t|T} C^T + R)
  ad::Var overshoot;       // same, under the rollout distributions
  ad::Var kl;              // sum_t KL(q(z_t) || p(z_t | z_{t-1}, u_{t-1}))
  ad::Var total;           // alpha*reconstruction + (1-alpha)*overshoot - kl (to maximize)
  double alpha = 0.5;
};

ad::Var reconstruction_term(const SmoothedTrace& smoothed, const Matrix& observations,
                            const ObservationModel& g, const ad::Var& r,
                            double jitter = kDefaultJitter);

/// The prior of step t is N(f(mu_{t-1|T}, u_{t-1}), A Sigma_{t-1|T} A^T + Q)
/// with A evaluated at the smoothed mean mu_{t-1|T}.
ad::Var kl_term(const SmoothedTrace& smoothed, const TransitionModel& f, const ad::Var& q,
                const Matrix& inputs, double jitter = kDefaultJitter);

/// Reconstruction log-likelihood of the observations under the open-loop
/// rollout started from `smoothed_init`, using the full predictive covariance
/// C Sigma-bar C^T + R.
ad::Var overshoot_term(const Gaussian& smoothed_init, const Matrix& inputs,
                       const Matrix& observations, const TransitionModel& f,
                       const ObservationModel& g, const ad::Var& q, const ad::Var& r,
                       double jitter = kDefaultJitter);

/// filter -> smooth -> three terms -> weighted assembly. Failures are
/// reported as PipelineError labelled filter, smooth, rollout or loss.
LossBreakdown total_loss(const Matrix& inputs, const Matrix& observations,
                         const BoundModel& model, double alpha, double jitter = kDefaultJitter);

}  // namespace nekf
