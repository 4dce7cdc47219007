#pragma once

#include "nekf/autodiff.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nekf {

enum class Activation { Tanh, Identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

struct MlpConfig {
  Index input_dim = 0;
  Index output_dim = 0;
  /// Widths of the hidden layers. Empty means a single affine layer.
  std::vector<Index> hidden{64, 64, 64};
  Activation activation = Activation::Tanh;

  Index layers() const { return static_cast<Index>(hidden.size()) + 1; }
  /// Throws ContractError on non-positive widths or output dimension.
  void validate() const;
};

/// Weights W_k (out x in) and biases b_k (out x 1) of each affine layer.
struct MlpParams {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
};

/// Xavier-uniform weights with bound sqrt(6 / (fan_in + fan_out)) and zero
/// biases, drawn from a generator seeded with `seed`.
MlpParams init_params(const MlpConfig& cfg, std::uint64_t seed);

/// MLP parameters bound to a tape.
struct MlpVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;

  static MlpVars bind(ad::Tape& tape, const MlpParams& params, bool requires_grad);
};

struct MlpOutput {
  ad::Var value;     // output_dim x 1
  ad::Var jacobian;  // output_dim x jac_cols, invalid when not requested
};

/// Forward pass on a column vector. When `jac_cols > 0` the Jacobian of the
/// output with respect to the first `jac_cols` inputs is assembled on the tape
/// as W_L diag(act'(a_{L-1})) ... diag(act'(a_1)) W_1[:, :jac_cols], so that a
/// loss depending on it can be differentiated with respect to the weights.
MlpOutput mlp_evaluate(const MlpConfig& cfg, const MlpVars& vars, const ad::Var& input,
                       Index jac_cols);

}  // namespace nekf
