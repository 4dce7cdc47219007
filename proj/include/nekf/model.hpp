#pragma once

// Learnable transition and observation functions plus the global noise and
// initial-state parameters that make up one Neural EKF model.

#include "nekf/autodiff.hpp"
#include "nekf/gaussian.hpp"
#include "nekf/mlp.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nekf {

/// z_next = z + net([z; u]) (residual) or net([z; u]).
class TransitionModel {
 public:
  TransitionModel() = default;
  TransitionModel(MlpConfig cfg, MlpVars net, Index latent_dim, Index input_dim, bool residual);

  /// Next-state mean and, if requested, its Jacobian with respect to z.
  MlpOutput evaluate(const ad::Var& z, const ad::Var& u, bool with_jacobian = true) const;
  ad::Var forward(const ad::Var& z, const ad::Var& u) const;
  ad::Var jacobian_state(const ad::Var& z, const ad::Var& u) const;

  Index latent_dim() const { return latent_dim_; }
  Index input_dim() const { return input_dim_; }

 private:
  MlpConfig cfg_;
  MlpVars net_;
  Index latent_dim_ = 0;
  Index input_dim_ = 0;
  bool residual_ = true;
};

/// x = net(z). Control inputs never enter the observation model.
class ObservationModel {
 public:
  ObservationModel() = default;
  ObservationModel(MlpConfig cfg, MlpVars net, Index latent_dim);

  MlpOutput evaluate(const ad::Var& z, bool with_jacobian = true) const;
  ad::Var forward(const ad::Var& z) const;
  ad::Var jacobian_state(const ad::Var& z) const;

  Index latent_dim() const { return latent_dim_; }
  Index obs_dim() const { return cfg_.output_dim; }

 private:
  MlpConfig cfg_;
  MlpVars net_;
  Index latent_dim_ = 0;
};

struct ModelSpec {
  Index latent_dim = 4;
  Index input_dim = 0;
  Index obs_dim = 1;
  std::vector<Index> hidden{64, 64, 64};
  Activation activation = Activation::Tanh;
  bool residual = true;

  MlpConfig transition_config() const;
  MlpConfig observation_config() const;
  void validate() const;
};

struct InitOptions {
  double q_variance = 1e-2;
  double r_variance = 1e-2;
  double sigma0_variance = 1.0;
  /// Multiplier on the transition network's output-layer weights.
  double transition_output_gain = 1.0;
};

/// All learnable quantities of a model, stored as plain matrices.
struct ModelParams {
  MlpParams transition;
  MlpParams observation;
  Matrix mu0;         // latent x 1
  Matrix log_sigma0;  // latent x 1, log-variances of the initial covariance
  Matrix log_q;       // latent x 1
  Matrix log_r;       // obs x 1

  static ModelParams initialize(const ModelSpec& spec, std::uint64_t seed,
                                const InitOptions& opts = {});

  /// Stable names in the order of tensors().
  std::vector<std::string> names() const;
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  /// Zero matrices shaped like tensors().
  std::vector<Matrix> zeros_like() const;
  std::size_t parameter_count() const;
};

/// A ModelParams instance placed on a tape, ready for inference.
struct BoundModel {
  TransitionModel transition;
  ObservationModel observation;
  ad::Var q;     // diag(exp(log_q))
  ad::Var r;     // diag(exp(log_r))
  Gaussian init; // N(mu0, diag(exp(log_sigma0)))
  /// Leaves in ModelParams::tensors() order.
  std::vector<ad::Var> leaves;

  static BoundModel bind(ad::Tape& tape, const ModelSpec& spec, const ModelParams& params,
                         bool requires_grad);
  /// Accumulated gradients of every leaf, in ModelParams::tensors() order.
  std::vector<Matrix> gradients() const;
};

}  // namespace nekf
