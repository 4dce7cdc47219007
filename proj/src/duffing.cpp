#include "nekf/duffing.hpp"

#include <Eigen/LU>

#include <cmath>
#include <random>

namespace nekf {

Forcing parse_forcing(const std::string& name) {
  if (name == "free") return Forcing::Free;
  if (name == "random") return Forcing::Random;
  throw ContractError("unknown forcing '" + name + "' (expected free or random)");
}

std::string to_string(Forcing f) { return f == Forcing::Free ? "free" : "random"; }

Matrix DuffingConfig::effective_stiffness() const {
  if (!symmetric_stiffness) return stiffness;
  Matrix k = stiffness;
  for (Index r = 1; r < k.rows(); ++r)
    for (Index c = 0; c < r; ++c) k(r, c) = k(c, r);
  return k;
}

void DuffingConfig::validate() const {
  const Index n = mass.rows();
  if (n < 1 || mass.cols() != n) throw ContractError("duffing.mass must be a non-empty square matrix");
  if (stiffness.rows() != n || stiffness.cols() != n) {
    throw ContractError("duffing.stiffness must be " + std::to_string(n) + "x" + std::to_string(n));
  }
  if (damping.rows() != n || damping.cols() != n) {
    throw ContractError("duffing.damping must be " + std::to_string(n) + "x" + std::to_string(n));
  }
  Eigen::FullPivLU<Matrix> lu(mass);
  if (!lu.isInvertible()) throw ContractError("duffing.mass must be invertible");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ContractError("duffing.dt must be positive");
  if (steps < 1) throw ContractError("duffing.steps must be >= 1");
  if (!(force_std >= 0.0)) throw ContractError("duffing.force_std must be >= 0");
  if (!(initial_range >= 0.0)) throw ContractError("duffing.initial_range must be >= 0");
  if (!std::isfinite(cubic)) throw ContractError("duffing.cubic must be finite");
  if (!mass.allFinite() || !stiffness.allFinite() || !damping.allFinite()) {
    throw ContractError("duffing matrices must be finite");
  }
}

Vector rk4_step(const Vector& z, double t, double dt, const Derivative& f) {
  const Vector k1 = f(t, z);
  const Vector k2 = f(t + 0.5 * dt, z + 0.5 * dt * k1);
  const Vector k3 = f(t + 0.5 * dt, z + 0.5 * dt * k2);
  const Vector k4 = f(t + dt, z + dt * k3);
  return z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Vector duffing_derivative(const DuffingConfig& cfg, const Matrix& mass_inv, const Matrix& stiffness,
                          const Vector& z, const Vector& u) {
  const Index n = mass_inv.rows();
  const auto x = z.head(n);
  const auto v = z.tail(n);
  Vector dz(2 * n);
  dz.head(n) = v;
  dz.tail(n) = mass_inv * (u - stiffness * x - cfg.damping * v);
  dz(n) -= cfg.cubic * x(0) * x(0) * x(0);
  return dz;
}

Matrix integrate_duffing(const DuffingConfig& cfg, const Vector& z0, const Matrix& forces,
                         std::size_t trajectory_index) {
  cfg.validate();
  const Index n = cfg.dof();
  if (z0.size() != 2 * n || forces.cols() != n) {
    throw DimensionError("integrate_duffing: expected a " + std::to_string(2 * n) +
                         "-state and " + std::to_string(n) + " force columns");
  }
  const Matrix mass_inv = cfg.mass.inverse();
  const Matrix k = cfg.effective_stiffness();
  Matrix states(forces.rows(), 2 * n);
  Vector z = z0;
  for (Index s = 0; s < forces.rows(); ++s) {
    const Vector u = forces.row(s).transpose();
    z = rk4_step(z, static_cast<double>(s) * cfg.dt, cfg.dt,
                 [&](double, const Vector& y) { return duffing_derivative(cfg, mass_inv, k, y, u); });
    if (!z.allFinite() || z.cwiseAbs().maxCoeff() > 1e6) {
      throw SimulationError("duffing trajectory " + std::to_string(trajectory_index) +
                                " diverged at step " + std::to_string(s + 1),
                            trajectory_index, static_cast<std::size_t>(s + 1));
    }
    states.row(s) = z.transpose();
  }
  return states;
}

TimeSeriesDataset simulate_duffing(const DuffingConfig& cfg, std::size_t n) {
  cfg.validate();
  const Index dof = cfg.dof();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> init(-cfg.initial_range, cfg.initial_range);
  std::normal_distribution<double> force(0.0, cfg.force_std);

  TimeSeriesDataset ds;
  ds.sample_rate = 1.0 / cfg.dt;
  for (Index i = 0; i < dof; ++i) {
    ds.input_names.push_back("u" + std::to_string(i + 1));
    ds.output_names.push_back("x" + std::to_string(i + 1));
  }
  for (std::size_t j = 0; j < n; ++j) {
    Vector z0(2 * dof);
    for (Index i = 0; i < z0.size(); ++i) z0(i) = init(rng);
    Matrix u = Matrix::Zero(cfg.steps, dof);
    if (cfg.forcing == Forcing::Random) {
      for (Index s = 0; s < cfg.steps; ++s)
        for (Index i = 0; i < dof; ++i) u(s, i) = force(rng);
    }
    Matrix states = integrate_duffing(cfg, z0, u, j);
    ds.trajectories.push_back({u, states.leftCols(dof), "duffing#" + std::to_string(j), 0});
  }
  ds.provenance.push_back({"simulate_duffing",
                           {{"n", std::to_string(n)},
                            {"dt", format_double(cfg.dt)},
                            {"steps", std::to_string(cfg.steps)},
                            {"forcing", to_string(cfg.forcing)},
                            {"force_std", format_double(cfg.force_std)},
                            {"cubic", format_double(cfg.cubic)},
                            {"symmetric_stiffness", cfg.symmetric_stiffness ? "true" : "false"},
                            {"seed", std::to_string(cfg.seed)}}});
  return ds;
}

}  // namespace nekf
