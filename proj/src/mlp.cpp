#include "nekf/mlp.hpp"

#include "nekf/errors.hpp"

#include <cmath>
#include <random>

namespace nekf {

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity" || name == "linear") return Activation::Identity;
  throw ContractError("unknown activation '" + name + "' (expected tanh or identity)");
}

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

void MlpConfig::validate() const {
  if (input_dim < 0 || output_dim < 1) {
    throw ContractError("MlpConfig: input_dim must be >= 0 and output_dim >= 1");
  }
  for (Index w : hidden) {
    if (w < 1) throw ContractError("MlpConfig: hidden widths must be >= 1");
  }
}

MlpParams init_params(const MlpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  MlpParams p;
  Index fan_in = cfg.input_dim;
  for (Index k = 0; k < cfg.layers(); ++k) {
    const Index fan_out = k + 1 < cfg.layers() ? cfg.hidden[static_cast<std::size_t>(k)]
                                               : cfg.output_dim;
    const double denom = static_cast<double>(fan_in + fan_out);
    const double bound = std::sqrt(6.0 / denom);
    Matrix w(fan_out, fan_in);
    // Column-major fill order is part of the determinism contract.
    for (Index c = 0; c < fan_in; ++c) {
      for (Index r = 0; r < fan_out; ++r) w(r, c) = bound * unit(rng);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Matrix::Zero(fan_out, 1));
    fan_in = fan_out;
  }
  return p;
}

MlpVars MlpVars::bind(ad::Tape& tape, const MlpParams& params, bool requires_grad) {
  MlpVars v;
  for (const Matrix& w : params.weights) v.weights.push_back(tape.leaf(w, requires_grad));
  for (const Matrix& b : params.biases) v.biases.push_back(tape.leaf(b, requires_grad));
  return v;
}

MlpOutput mlp_evaluate(const MlpConfig& cfg, const MlpVars& vars, const ad::Var& input,
                       Index jac_cols) {
  if (input.cols() != 1 || input.rows() != cfg.input_dim) {
    throw ContractError("mlp: expected a " + std::to_string(cfg.input_dim) +
                        "-vector input, got " + std::to_string(input.rows()) + "x" +
                        std::to_string(input.cols()));
  }
  if (static_cast<Index>(vars.weights.size()) != cfg.layers() ||
      vars.biases.size() != vars.weights.size()) {
    throw ContractError("mlp: parameter count does not match the configuration");
  }
  if (jac_cols < 0 || jac_cols > cfg.input_dim) {
    throw ContractError("mlp: Jacobian column count out of range");
  }
  const bool tanh = cfg.activation == Activation::Tanh;
  const Index layers = cfg.layers();

  ad::Var h = input;
  ad::Var jac;
  for (Index k = 0; k < layers; ++k) {
    const ad::Var& w = vars.weights[static_cast<std::size_t>(k)];
    const ad::Var& b = vars.biases[static_cast<std::size_t>(k)];
    ad::Var pre = ad::add(ad::matmul(w, h), b);

    if (jac_cols > 0) {
      if (k == 0) {
        jac = jac_cols == w.cols() ? w : ad::slice(w, 0, 0, w.rows(), jac_cols);
      } else {
        jac = ad::matmul(w, jac);
      }
    }
    if (k + 1 == layers) {
      h = pre;
      break;
    }
    if (tanh) {
      h = ad::tanh(pre);
      if (jac_cols > 0) jac = ad::scale_rows(ad::tanh_derivative(pre), jac);
    } else {
      h = pre;
    }
  }
  return {h, jac};
}

}  // namespace nekf
