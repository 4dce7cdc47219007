#include "nekf/elbo.hpp"

#include "nekf/errors.hpp"

#include <string>
#include <vector>

namespace nekf {

ad::Var reconstruction_term(const SmoothedTrace& smoothed, const Matrix& observations,
                            const ObservationModel& g, const ad::Var& r, double jitter) {
  const std::size_t steps = smoothed.smoothed.size() - 1;
  if (smoothed.smoothed.empty() || static_cast<Index>(steps) != observations.rows()) {
    throw DimensionError("reconstruction_term: " + std::to_string(observations.rows()) +
                         " observations for a smoothed trace of length " + std::to_string(steps));
  }
  ad::Tape& tape = r.tape();
  std::vector<ad::Var> terms;
  terms.reserve(steps);
  for (std::size_t t = 1; t <= steps; ++t) {
    const Gaussian& z = smoothed.smoothed[t];
    MlpOutput out = g.evaluate(z.mean, true);
    Gaussian px = pushforward_affine(z, out.jacobian, out.value, r, jitter);
    terms.push_back(log_prob(px, row_constant(tape, observations, static_cast<Index>(t - 1))));
  }
  return ad::add_n(terms);
}

ad::Var kl_term(const SmoothedTrace& smoothed, const TransitionModel& f, const ad::Var& q,
                const Matrix& inputs, double jitter) {
  const std::size_t steps = smoothed.smoothed.size() - 1;
  if (smoothed.smoothed.empty() || static_cast<Index>(steps) != inputs.rows()) {
    throw DimensionError("kl_term: " + std::to_string(inputs.rows()) +
                         " inputs for a smoothed trace of length " + std::to_string(steps));
  }
  ad::Tape& tape = q.tape();
  std::vector<ad::Var> terms;
  terms.reserve(steps);
  for (std::size_t t = 1; t <= steps; ++t) {
    const Gaussian& prev = smoothed.smoothed[t - 1];
    MlpOutput out = f.evaluate(prev.mean, row_constant(tape, inputs, static_cast<Index>(t - 1)));
    Gaussian prior = pushforward_affine(prev, out.jacobian, out.value, q, jitter);
    terms.push_back(kl_divergence(smoothed.smoothed[t], prior));
  }
  return ad::add_n(terms);
}

ad::Var overshoot_term(const Gaussian& smoothed_init, const Matrix& inputs,
                       const Matrix& observations, const TransitionModel& f,
                       const ObservationModel& g, const ad::Var& q, const ad::Var& r,
                       double jitter) {
  if (inputs.rows() != observations.rows()) {
    throw DimensionError("overshoot_term: " + std::to_string(inputs.rows()) + " inputs vs " +
                         std::to_string(observations.rows()) + " observations");
  }
  std::vector<RolloutStep> steps = rollout(smoothed_init, inputs, f, g, q, r, jitter);
  ad::Tape& tape = q.tape();
  std::vector<ad::Var> terms;
  terms.reserve(steps.size());
  for (std::size_t t = 0; t < steps.size(); ++t) {
    terms.push_back(
        log_prob(steps[t].observation, row_constant(tape, observations, static_cast<Index>(t))));
  }
  return ad::add_n(terms);
}

LossBreakdown total_loss(const Matrix& inputs, const Matrix& observations,
                         const BoundModel& model, double alpha, double jitter) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("total_loss: alpha must lie in [0, 1]");
  FilterTrace trace = filter(inputs, observations, model.transition, model.observation, model.q,
                             model.r, model.init, jitter);
  SmoothedTrace smoothed = rts_smooth(trace, jitter);

  LossBreakdown out;
  out.alpha = alpha;
  out.overshoot = overshoot_term(smoothed.smoothed.front(), inputs, observations,
                                 model.transition, model.observation, model.q, model.r, jitter);
  try {
    out.reconstruction =
        reconstruction_term(smoothed, observations, model.observation, model.r, jitter);
    out.kl = kl_term(smoothed, model.transition, model.q, inputs, jitter);
    ad::Var weighted =
        ad::add(ad::scale(out.reconstruction, alpha), ad::scale(out.overshoot, 1.0 - alpha));
    out.total = ad::sub(weighted, out.kl);
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError("loss", 0, e.what());
  }
  return out;
}

}  // namespace nekf
