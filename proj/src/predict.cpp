#include "nekf/predict.hpp"

#include "nekf/ekf.hpp"
#include "nekf/errors.hpp"

namespace nekf {

namespace {

void store(Prediction& out, Index row, const Gaussian& obs) {
  out.mean.row(row) = obs.mean.value().transpose();
  out.variance.row(row) = obs.cov.value().diagonal().transpose();
}

Gaussian observe(const Gaussian& state, const ObservationModel& g, const ad::Var& r,
                 double jitter) {
  MlpOutput o = g.evaluate(state.mean, true);
  return pushforward_affine(state, o.jacobian, o.value, r, jitter);
}

}  // namespace

PredictMode parse_predict_mode(const std::string& name) {
  if (name == "rollout") return PredictMode::Rollout;
  if (name == "filtered") return PredictMode::Filtered;
  if (name == "smoothed") return PredictMode::Smoothed;
  throw ContractError("unknown prediction mode '" + name + "' (expected rollout, filtered or smoothed)");
}

std::string to_string(PredictMode m) {
  switch (m) {
    case PredictMode::Rollout: return "rollout";
    case PredictMode::Filtered: return "filtered";
    case PredictMode::Smoothed: return "smoothed";
  }
  return "rollout";
}

Prediction predict(const ModelSpec& spec, const ModelParams& params, const Trajectory& traj,
                   PredictMode mode, Index init_steps, double jitter) {
  if (traj.u.cols() != spec.input_dim || traj.x.cols() != spec.obs_dim) {
    throw DimensionError("predict: data has " + std::to_string(traj.u.cols()) + " inputs and " +
                         std::to_string(traj.x.cols()) + " outputs, checkpoint expects " +
                         std::to_string(spec.input_dim) + " and " + std::to_string(spec.obs_dim));
  }
  const Index t_len = traj.length();
  if (init_steps < 0 || init_steps > t_len) {
    throw ContractError("predict: init_steps " + std::to_string(init_steps) +
                        " outside [0, " + std::to_string(t_len) + "]");
  }
  ad::Tape tape;
  const BoundModel m = BoundModel::bind(tape, spec, params, false);
  Prediction out{Matrix(t_len, spec.obs_dim), Matrix(t_len, spec.obs_dim)};

  if (mode == PredictMode::Rollout) {
    Gaussian start = m.init;
    if (init_steps > 0) {
      const FilterTrace tr = filter(traj.u.topRows(init_steps), traj.x.topRows(init_steps),
                                    m.transition, m.observation, m.q, m.r, m.init, jitter);
      start = rts_smooth(tr, jitter).smoothed.front();
    }
    const auto steps = rollout(start, traj.u, m.transition, m.observation, m.q, m.r, jitter);
    for (Index t = 0; t < t_len; ++t) store(out, t, steps[static_cast<std::size_t>(t)].observation);
    return out;
  }

  const FilterTrace tr = filter(traj.u, traj.x, m.transition, m.observation, m.q, m.r, m.init, jitter);
  if (mode == PredictMode::Filtered) {
    for (Index t = 0; t < t_len; ++t) {
      store(out, t, observe(tr.filtered[static_cast<std::size_t>(t)], m.observation, m.r, jitter));
    }
    return out;
  }
  const SmoothedTrace sm = rts_smooth(tr, jitter);
  for (Index t = 0; t < t_len; ++t) {
    store(out, t, observe(sm.smoothed[static_cast<std::size_t>(t + 1)], m.observation, m.r, jitter));
  }
  return out;
}

Prediction predict_physical(const ModelSpec& spec, const ModelParams& params,
                            const Trajectory& traj, PredictMode mode, Index init_steps,
                            const Normalization* norm, double jitter) {
  Prediction p = predict(spec, params, traj, mode, init_steps, jitter);
  if (norm) {
    p.mean = destandardize_outputs(p.mean, *norm);
    p.variance = destandardize_output_variances(p.variance, *norm);
  }
  return p;
}

}  // namespace nekf
