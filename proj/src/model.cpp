#include "nekf/model.hpp"

#include "nekf/errors.hpp"

namespace nekf {

TransitionModel::TransitionModel(MlpConfig cfg, MlpVars net, Index latent_dim, Index input_dim,
                                 bool residual)
    : cfg_(std::move(cfg)),
      net_(std::move(net)),
      latent_dim_(latent_dim),
      input_dim_(input_dim),
      residual_(residual) {
  if (cfg_.input_dim != latent_dim + input_dim || cfg_.output_dim != latent_dim) {
    throw ContractError("TransitionModel: network must map latent+input to latent");
  }
}

MlpOutput TransitionModel::evaluate(const ad::Var& z, const ad::Var& u, bool with_jacobian) const {
  if (z.rows() != latent_dim_ || z.cols() != 1) {
    throw ContractError("transition: state has " + std::to_string(z.rows()) +
                        " rows, expected " + std::to_string(latent_dim_));
  }
  if (u.valid() && (u.rows() != input_dim_ || u.cols() != 1)) {
    throw ContractError("transition: input has " + std::to_string(u.rows()) +
                        " rows, expected " + std::to_string(input_dim_));
  }
  if (!u.valid() && input_dim_ != 0) throw ContractError("transition: missing control input");
  ad::Var in = input_dim_ == 0 ? z : ad::vcat(z, u);
  MlpOutput out = mlp_evaluate(cfg_, net_, in, with_jacobian ? latent_dim_ : 0);
  if (residual_) {
    out.value = ad::add(z, out.value);
    if (with_jacobian) out.jacobian = ad::add_identity(out.jacobian, 1.0);
  }
  return out;
}

ad::Var TransitionModel::forward(const ad::Var& z, const ad::Var& u) const {
  return evaluate(z, u, false).value;
}

ad::Var TransitionModel::jacobian_state(const ad::Var& z, const ad::Var& u) const {
  return evaluate(z, u, true).jacobian;
}

ObservationModel::ObservationModel(MlpConfig cfg, MlpVars net, Index latent_dim)
    : cfg_(std::move(cfg)), net_(std::move(net)), latent_dim_(latent_dim) {
  if (cfg_.input_dim != latent_dim) {
    throw ContractError("ObservationModel: network input must equal the latent dimension");
  }
}

MlpOutput ObservationModel::evaluate(const ad::Var& z, bool with_jacobian) const {
  if (z.rows() != latent_dim_ || z.cols() != 1) {
    throw ContractError("observation: state has " + std::to_string(z.rows()) +
                        " rows, expected " + std::to_string(latent_dim_));
  }
  return mlp_evaluate(cfg_, net_, z, with_jacobian ? latent_dim_ : 0);
}

ad::Var ObservationModel::forward(const ad::Var& z) const { return evaluate(z, false).value; }

ad::Var ObservationModel::jacobian_state(const ad::Var& z) const {
  return evaluate(z, true).jacobian;
}

// ---- ModelSpec -------------------------------------------------------------

MlpConfig ModelSpec::transition_config() const {
  return {latent_dim + input_dim, latent_dim, hidden, activation};
}

MlpConfig ModelSpec::observation_config() const {
  return {latent_dim, obs_dim, hidden, activation};
}

void ModelSpec::validate() const {
  if (latent_dim < 1 || obs_dim < 1 || input_dim < 0) {
    throw ContractError("ModelSpec: latent_dim and obs_dim must be >= 1, input_dim >= 0");
  }
  transition_config().validate();
  observation_config().validate();
}

// ---- ModelParams -----------------------------------------------------------

ModelParams ModelParams::initialize(const ModelSpec& spec, std::uint64_t seed,
                                    const InitOptions& opts) {
  spec.validate();
  ModelParams p;
  p.transition = init_params(spec.transition_config(), seed);
  p.observation = init_params(spec.observation_config(), seed + 0x9E3779B97F4A7C15ULL);
  p.transition.weights.back() *= opts.transition_output_gain;
  p.mu0 = Matrix::Zero(spec.latent_dim, 1);
  p.log_sigma0 = CovarianceParam::from_variance(spec.latent_dim, opts.sigma0_variance).log_diag;
  p.log_q = CovarianceParam::from_variance(spec.latent_dim, opts.q_variance).log_diag;
  p.log_r = CovarianceParam::from_variance(spec.obs_dim, opts.r_variance).log_diag;
  return p;
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  auto add_mlp = [&out](const std::string& prefix, const MlpParams& m) {
    for (std::size_t k = 0; k < m.weights.size(); ++k) {
      out.push_back(prefix + ".W" + std::to_string(k));
      out.push_back(prefix + ".b" + std::to_string(k));
    }
  };
  add_mlp("transition", transition);
  add_mlp("observation", observation);
  out.insert(out.end(), {"mu0", "log_sigma0", "log_q", "log_r"});
  return out;
}

std::vector<Matrix*> ModelParams::tensors() {
  std::vector<Matrix*> out;
  for (MlpParams* m : {&transition, &observation}) {
    for (std::size_t k = 0; k < m->weights.size(); ++k) {
      out.push_back(&m->weights[k]);
      out.push_back(&m->biases[k]);
    }
  }
  out.insert(out.end(), {&mu0, &log_sigma0, &log_q, &log_r});
  return out;
}

std::vector<const Matrix*> ModelParams::tensors() const {
  auto mut = const_cast<ModelParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<Matrix> ModelParams::zeros_like() const {
  std::vector<Matrix> out;
  for (const Matrix* m : tensors()) out.push_back(Matrix::Zero(m->rows(), m->cols()));
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

// ---- BoundModel ------------------------------------------------------------

BoundModel BoundModel::bind(ad::Tape& tape, const ModelSpec& spec, const ModelParams& params,
                            bool requires_grad) {
  spec.validate();
  BoundModel b;
  MlpVars tv = MlpVars::bind(tape, params.transition, requires_grad);
  MlpVars ov = MlpVars::bind(tape, params.observation, requires_grad);
  for (const MlpVars* v : {&tv, &ov}) {
    for (std::size_t k = 0; k < v->weights.size(); ++k) {
      b.leaves.push_back(v->weights[k]);
      b.leaves.push_back(v->biases[k]);
    }
  }
  ad::Var mu0 = tape.leaf(params.mu0, requires_grad);
  ad::Var log_sigma0 = tape.leaf(params.log_sigma0, requires_grad);
  ad::Var log_q = tape.leaf(params.log_q, requires_grad);
  ad::Var log_r = tape.leaf(params.log_r, requires_grad);
  b.leaves.insert(b.leaves.end(), {mu0, log_sigma0, log_q, log_r});

  b.transition = TransitionModel(spec.transition_config(), std::move(tv), spec.latent_dim,
                                 spec.input_dim, spec.residual);
  b.observation = ObservationModel(spec.observation_config(), std::move(ov), spec.latent_dim);
  b.q = CovarianceParam::materialize(log_q);
  b.r = CovarianceParam::materialize(log_r);
  b.init = {mu0, CovarianceParam::materialize(log_sigma0)};
  return b;
}

std::vector<Matrix> BoundModel::gradients() const {
  std::vector<Matrix> out;
  out.reserve(leaves.size());
  for (const ad::Var& v : leaves) out.push_back(v.grad());
  return out;
}

}  // namespace nekf
