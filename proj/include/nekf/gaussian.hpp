#pragma once

#include "nekf/autodiff.hpp"

namespace nekf {

/// Jitter added to the diagonal after every covariance-producing step.
inline constexpr double kDefaultJitter = 1e-6;

/// Multivariate normal belief whose moments live on a tape.
struct Gaussian {
  ad::Var mean;  // d x 1
  ad::Var cov;   // d x d

  Index dim() const { return mean.rows(); }
  /// Throws DimensionError if mean and cov disagree.
  void check() const;
};

/// 1/2 (S + S^T) + jitter * I.
ad::Var sanitize(const ad::Var& cov, double jitter = kDefaultJitter);

/// log N(x; g.mean, g.cov) in closed form.
ad::Var log_prob(const Gaussian& g, const ad::Var& x);

/// KL(q || p) for two Gaussians of equal dimension.
ad::Var kl_divergence(const Gaussian& q, const Gaussian& p);

/// N(new_mean, J g.cov J^T + noise_cov), with the covariance sanitized.
Gaussian pushforward_affine(const Gaussian& g, const ad::Var& jac, const ad::Var& new_mean,
                            const ad::Var& noise_cov, double jitter = kDefaultJitter);

/// Diagonal covariance parameterized by per-dimension log-variances, so any
/// real parameter vector maps to a positive definite matrix.
struct CovarianceParam {
  Vector log_diag;

  static CovarianceParam from_variance(Index dim, double variance);
  Matrix materialize() const;
  /// diag(exp(log_diag)) on the tape of `log_diag`.
  static ad::Var materialize(const ad::Var& log_diag);
};

}  // namespace nekf
