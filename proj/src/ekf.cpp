#include "nekf/ekf.hpp"

#include "nekf/errors.hpp"

#include <string>

namespace nekf {

namespace {

void check_sequence(const char* what, const Matrix& inputs, const Matrix* observations,
                    Index input_dim, Index obs_dim) {
  if (inputs.rows() < 1) throw ContractError(std::string(what) + ": sequence length must be >= 1");
  if (inputs.cols() != input_dim) {
    throw DimensionError(std::string(what) + ": inputs have " + std::to_string(inputs.cols()) +
                         " channels, model expects " + std::to_string(input_dim));
  }
  if (observations != nullptr) {
    if (observations->rows() != inputs.rows()) {
      throw DimensionError(std::string(what) + ": " + std::to_string(inputs.rows()) +
                           " input rows vs " + std::to_string(observations->rows()) +
                           " observation rows");
    }
    if (observations->cols() != obs_dim) {
      throw DimensionError(std::string(what) + ": observations have " +
                           std::to_string(observations->cols()) + " channels, model expects " +
                           std::to_string(obs_dim));
    }
  }
}

}  // namespace

ad::Var row_constant(ad::Tape& tape, const Matrix& m, Index t) {
  return tape.constant(m.row(t).transpose());
}

StepResult predict_step(const Gaussian& prior, const ad::Var& u, const TransitionModel& f,
                        const ad::Var& q, double jitter) {
  MlpOutput out = f.evaluate(prior.mean, u, true);
  return {pushforward_affine(prior, out.jacobian, out.value, q, jitter), out.jacobian};
}

StepResult update_step(const Gaussian& predicted, const ad::Var& x, const ObservationModel& g,
                       const ad::Var& r, double jitter) {
  if (x.rows() != g.obs_dim() || x.cols() != 1) {
    throw DimensionError("update_step: observation has " + std::to_string(x.rows()) +
                         " rows, model expects " + std::to_string(g.obs_dim()));
  }
  MlpOutput out = g.evaluate(predicted.mean, true);
  const ad::Var& c = out.jacobian;
  // S = C Sigma C^T + R; K = Sigma C^T S^{-1} = (S^{-1} C Sigma)^T.
  ad::Var c_sigma = ad::matmul(c, predicted.cov);
  ad::Var s = sanitize(ad::add(ad::matmul(c_sigma, ad::transpose(c)), r), jitter);
  ad::Var gain = ad::transpose(ad::solve_spd(s, c_sigma));
  ad::Var mean = ad::add(predicted.mean, ad::matmul(gain, ad::sub(x, out.value)));
  ad::Var cov = sanitize(ad::sub(predicted.cov, ad::matmul(gain, c_sigma)), jitter);
  return {{mean, cov}, c};
}

FilterTrace filter(const Matrix& inputs, const Matrix& observations, const TransitionModel& f,
                   const ObservationModel& g, const ad::Var& q, const ad::Var& r,
                   const Gaussian& init, double jitter) {
  check_sequence("filter", inputs, &observations, f.input_dim(), g.obs_dim());
  ad::Tape& tape = init.mean.tape();
  const auto steps = static_cast<std::size_t>(inputs.rows());
  FilterTrace trace;
  trace.initial = init;
  trace.predicted.reserve(steps);
  trace.filtered.reserve(steps);
  trace.jacobians_a.reserve(steps);
  trace.jacobians_c.reserve(steps);
  for (std::size_t t = 1; t <= steps; ++t) {
    try {
      const auto row = static_cast<Index>(t - 1);
      StepResult pred = predict_step(trace.at(t - 1), row_constant(tape, inputs, row), f, q, jitter);
      StepResult upd =
          update_step(pred.belief, row_constant(tape, observations, row), g, r, jitter);
      trace.predicted.push_back(pred.belief);
      trace.jacobians_a.push_back(pred.jacobian);
      trace.filtered.push_back(upd.belief);
      trace.jacobians_c.push_back(upd.jacobian);
    } catch (const PipelineError&) {
      throw;
    } catch (const std::exception& e) {
      throw PipelineError("filter", t, e.what());
    }
  }
  return trace;
}

SmoothedTrace rts_smooth(const FilterTrace& trace, double jitter) {
  const std::size_t steps = trace.length();
  if (steps == 0 || trace.predicted.size() != steps || trace.jacobians_a.size() != steps) {
    throw ContractError("rts_smooth: incomplete filter trace");
  }
  SmoothedTrace out;
  out.smoothed.resize(steps + 1);
  out.gains.resize(steps);
  out.smoothed[steps] = trace.filtered[steps - 1];
  for (std::size_t t = steps; t-- > 0;) {
    try {
      const Gaussian& filt = trace.at(t);
      const Gaussian& pred = trace.predicted[t];  // (mu_{t+1|t}, Sigma_{t+1|t})
      const Gaussian& next = out.smoothed[t + 1];
      const ad::Var& a = trace.jacobians_a[t];
      // K = Sigma_{t|t} A^T Sigma_{t+1|t}^{-1} = (Sigma_{t+1|t}^{-1} A Sigma_{t|t})^T
      ad::Var gain = ad::transpose(ad::solve_spd(pred.cov, ad::matmul(a, filt.cov)));
      ad::Var mean = ad::add(filt.mean, ad::matmul(gain, ad::sub(next.mean, pred.mean)));
      ad::Var cov = ad::add(
          filt.cov, ad::matmul(ad::matmul(gain, ad::sub(next.cov, pred.cov)), ad::transpose(gain)));
      out.smoothed[t] = {mean, sanitize(cov, jitter)};
      out.gains[t] = gain;
    } catch (const std::exception& e) {
      throw PipelineError("smooth", t, e.what());
    }
  }
  return out;
}

std::vector<RolloutStep> rollout(const Gaussian& init, const Matrix& inputs,
                                 const TransitionModel& f, const ObservationModel& g,
                                 const ad::Var& q, const ad::Var& r, double jitter) {
  check_sequence("rollout", inputs, nullptr, f.input_dim(), g.obs_dim());
  ad::Tape& tape = init.mean.tape();
  std::vector<RolloutStep> out;
  out.reserve(static_cast<std::size_t>(inputs.rows()));
  Gaussian state = init;
  for (Index t = 1; t <= inputs.rows(); ++t) {
    try {
      state = predict_step(state, row_constant(tape, inputs, t - 1), f, q, jitter).belief;
      MlpOutput obs = g.evaluate(state.mean, true);
      out.push_back({state, pushforward_affine(state, obs.jacobian, obs.value, r, jitter)});
    } catch (const std::exception& e) {
      throw PipelineError("rollout", static_cast<std::size_t>(t), e.what());
    }
  }
  return out;
}

}  // namespace nekf
