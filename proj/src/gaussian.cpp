#include "nekf/gaussian.hpp"

#include "nekf/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace nekf {

namespace {
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}

void Gaussian::check() const {
  if (mean.cols() != 1 || cov.rows() != mean.rows() || cov.cols() != mean.rows()) {
    throw DimensionError("Gaussian: mean " + std::to_string(mean.rows()) + "x" +
                         std::to_string(mean.cols()) + " does not match covariance " +
                         std::to_string(cov.rows()) + "x" + std::to_string(cov.cols()));
  }
}

ad::Var sanitize(const ad::Var& cov, double jitter) {
  if (cov.rows() != cov.cols()) throw DimensionError("sanitize: covariance is not square");
  ad::Var sym = ad::scale(ad::add(cov, ad::transpose(cov)), 0.5);
  return jitter != 0.0 ? ad::add_identity(sym, jitter) : sym;
}

ad::Var log_prob(const Gaussian& g, const ad::Var& x) {
  g.check();
  if (x.rows() != g.dim() || x.cols() != 1) {
    throw DimensionError("log_prob: point of dimension " + std::to_string(x.rows()) +
                         " for a " + std::to_string(g.dim()) + "-dimensional Gaussian");
  }
  ad::Var r = ad::sub(x, g.mean);
  ad::Var s = ad::add(ad::logdet_spd(g.cov), ad::quad_form(r, g.cov));
  ad::Var c = g.mean.tape().scalar(static_cast<double>(g.dim()) * kLog2Pi);
  return ad::scale(ad::add(s, c), -0.5);
}

ad::Var kl_divergence(const Gaussian& q, const Gaussian& p) {
  q.check();
  p.check();
  if (q.dim() != p.dim()) {
    throw DimensionError("kl_divergence: dimensions " + std::to_string(q.dim()) + " and " +
                         std::to_string(p.dim()));
  }
  ad::Tape& tape = q.mean.tape();
  ad::Var delta = ad::sub(p.mean, q.mean);
  ad::Var log_ratio = ad::sub(ad::logdet_spd(p.cov), ad::logdet_spd(q.cov));
  ad::Var tr = ad::trace(ad::solve_spd(p.cov, q.cov));
  ad::Var maha = ad::quad_form(delta, p.cov);
  const ad::Var parts[] = {log_ratio, tr, maha, tape.scalar(-static_cast<double>(q.dim()))};
  return ad::scale(ad::add_n(parts), 0.5);
}

Gaussian pushforward_affine(const Gaussian& g, const ad::Var& jac, const ad::Var& new_mean,
                            const ad::Var& noise_cov, double jitter) {
  g.check();
  if (jac.cols() != g.dim()) {
    throw DimensionError("pushforward_affine: Jacobian has " + std::to_string(jac.cols()) +
                         " columns for a " + std::to_string(g.dim()) + "-dimensional Gaussian");
  }
  if (new_mean.rows() != jac.rows() || new_mean.cols() != 1 || noise_cov.rows() != jac.rows() ||
      noise_cov.cols() != jac.rows()) {
    throw DimensionError("pushforward_affine: output dimension " + std::to_string(jac.rows()) +
                         " disagrees with mean or noise covariance");
  }
  ad::Var cov = ad::add(ad::matmul(ad::matmul(jac, g.cov), ad::transpose(jac)), noise_cov);
  return {new_mean, sanitize(cov, jitter)};
}

CovarianceParam CovarianceParam::from_variance(Index dim, double variance) {
  if (!(variance > 0.0)) throw ContractError("CovarianceParam: variance must be positive");
  return {Vector::Constant(dim, std::log(variance))};
}

Matrix CovarianceParam::materialize() const { return log_diag.array().exp().matrix().asDiagonal(); }

ad::Var CovarianceParam::materialize(const ad::Var& log_diag) {
  return ad::diag(ad::exp(log_diag));
}

}  // namespace nekf
