#pragma once

// Brute-force reference for linear-Gaussian state-space models: the joint
// Gaussian over (z_0..z_T, x_1..x_T) is built explicitly from the system
// matrices and conditioned with dense Eigen algebra.

#include "nekf/model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <random>

namespace nekf::testing {

struct LinearSystem {
  Matrix a, b, c;  // z_t = A z_{t-1} + B u_{t-1} + w_t,  x_t = C z_t + v_t
  Matrix q, r;
  Vector m0;
  Matrix p0;

  Index nz() const { return a.rows(); }
  Index nx() const { return c.rows(); }
  Index nu() const { return b.cols(); }
};

struct Marginal {
  Vector mean;
  Matrix cov;
};

class JointGaussian {
 public:
  /// `inputs` is T x nu (row k holds u_k), `obs` is T x nx.
  JointGaussian(const LinearSystem& s, const Matrix& inputs, const Matrix& obs)
      : s_(s), obs_(obs), steps_(obs.rows()) {
    const Index n = s.nz(), m = s.nx(), t_len = steps_;
    const Index ne = n * (t_len + 1) + m * t_len;
    // Every latent and observation is an affine map of e = (z0, w_1..w_T, v_1..v_T).
    Matrix noise_cov = Matrix::Zero(ne, ne);
    Vector noise_mean = Vector::Zero(ne);
    noise_cov.topLeftCorner(n, n) = s.p0;
    noise_mean.head(n) = s.m0;
    for (Index t = 1; t <= t_len; ++t) {
      noise_cov.block(n * t, n * t, n, n) = s.q;
      const Index vo = n * (t_len + 1) + m * (t - 1);
      noise_cov.block(vo, vo, m, m) = s.r;
    }
    const Index ny = n * (t_len + 1) + m * t_len;
    Matrix g = Matrix::Zero(ny, ne);
    Vector off = Vector::Zero(ny);
    g.block(0, 0, n, n).setIdentity();
    for (Index t = 1; t <= t_len; ++t) {
      g.block(n * t, 0, n, ne) = s.a * g.block(n * (t - 1), 0, n, ne);
      g.block(n * t, n * t, n, n) += Matrix::Identity(n, n);
      off.segment(n * t, n) = s.a * off.segment(n * (t - 1), n);
      if (s.nu() > 0) off.segment(n * t, n) += s.b * inputs.row(t - 1).transpose();
      const Index xo = n * (t_len + 1) + m * (t - 1);
      g.block(xo, 0, m, ne) = s.c * g.block(n * t, 0, n, ne);
      g.block(xo, xo, m, m) += Matrix::Identity(m, m);
      off.segment(xo, m) = s.c * off.segment(n * t, n);
    }
    mean_ = g * noise_mean + off;
    cov_ = g * noise_cov * g.transpose();
  }

  /// Distribution of z_t given x_1..x_k.
  Marginal latent_given(Index t, Index k) const {
    const Index n = s_.nz(), m = s_.nx();
    Vector mu = mean_.segment(n * t, n);
    Matrix szz = cov_.block(n * t, n * t, n, n);
    if (k == 0) return {mu, szz};
    const Index xo = n * (steps_ + 1);
    const Index kx = m * k;
    Matrix szx = cov_.block(n * t, xo, n, kx);
    Matrix sxx = cov_.block(xo, xo, kx, kx);
    Vector x(kx);
    for (Index i = 0; i < k; ++i) x.segment(m * i, m) = obs_.row(i).transpose();
    Eigen::LDLT<Matrix> ldlt(sxx);
    mu += szx * ldlt.solve(x - mean_.segment(xo, kx));
    szz -= szx * ldlt.solve(szx.transpose());
    return {mu, 0.5 * (szz + szz.transpose())};
  }

 private:
  LinearSystem s_;
  Matrix obs_;
  Index steps_;
  Vector mean_;
  Matrix cov_;
};

/// Random stable system with spectral norm of A below `radius`.
inline LinearSystem random_linear_system(std::mt19937_64& rng, Index nz, Index nx, Index nu,
                                         double radius = 0.95) {
  auto normal = [&](Index r, Index c) {
    std::normal_distribution<double> d;
    Matrix m(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = d(rng);
    return m;
  };
  auto spd = [&](Index n, double shift, double scale) {
    Matrix b = normal(n, n);
    Matrix s = scale * (b * b.transpose() / static_cast<double>(n));
    s.diagonal().array() += shift;
    return Matrix(0.5 * (s + s.transpose()));
  };
  LinearSystem s;
  Matrix a = normal(nz, nz);
  const double norm = Eigen::JacobiSVD<Matrix>(a).singularValues()(0);
  s.a = a * (radius / norm);
  s.b = normal(nz, nu);
  s.c = normal(nx, nz);
  s.q = spd(nz, 0.05, 0.1);
  s.r = spd(nx, 0.1, 0.1);
  s.m0 = normal(nz, 1);
  s.p0 = spd(nz, 0.5, 0.5);
  return s;
}

/// Draws one trajectory: returns (inputs T x nu, observations T x nx).
inline std::pair<Matrix, Matrix> simulate_linear(std::mt19937_64& rng, const LinearSystem& s,
                                                 Index steps) {
  std::normal_distribution<double> d;
  auto draw = [&](const Matrix& cov) {
    Vector e(cov.rows());
    for (Index i = 0; i < e.size(); ++i) e(i) = d(rng);
    return Vector(Matrix(cov.llt().matrixL()) * e);
  };
  Matrix u(steps, s.nu()), x(steps, s.nx());
  Vector z = s.m0 + draw(s.p0);
  for (Index t = 0; t < steps; ++t) {
    for (Index j = 0; j < s.nu(); ++j) u(t, j) = d(rng);
    z = s.a * z + draw(s.q);
    if (s.nu() > 0) z += s.b * u.row(t).transpose();
    x.row(t) = (s.c * z + draw(s.r)).transpose();
  }
  return {u, x};
}

/// The system expressed as single-layer identity networks on `tape`.
struct LinearModels {
  TransitionModel f;
  ObservationModel g;
  ad::Var q, r;
  Gaussian init;
};

inline LinearModels bind_linear(ad::Tape& tape, const LinearSystem& s, bool residual = false) {
  MlpConfig tcfg{s.nz() + s.nu(), s.nz(), {}, Activation::Identity};
  Matrix w(s.nz(), s.nz() + s.nu());
  w << (residual ? Matrix(s.a - Matrix::Identity(s.nz(), s.nz())) : s.a), s.b;
  MlpParams tp{{w}, {Matrix::Zero(s.nz(), 1)}};
  MlpConfig ocfg{s.nz(), s.nx(), {}, Activation::Identity};
  MlpParams op{{s.c}, {Matrix::Zero(s.nx(), 1)}};
  return {TransitionModel(tcfg, MlpVars::bind(tape, tp, false), s.nz(), s.nu(), residual),
          ObservationModel(ocfg, MlpVars::bind(tape, op, false), s.nz()),
          tape.constant(s.q),
          tape.constant(s.r),
          {tape.constant(s.m0), tape.constant(s.p0)}};
}

}  // namespace nekf::testing
