#pragma once

// Multi-degree-of-freedom Duffing oscillator
//   x'' = M^{-1} (u - K x - C x') - k_n x_1^3 e_1
// integrated with fixed-step fourth-order Runge-Kutta.

#include "nekf/dataset.hpp"
#include "nekf/errors.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace nekf {

enum class Forcing { Free, Random };

Forcing parse_forcing(const std::string& name);
std::string to_string(Forcing f);

struct DuffingConfig {
  Matrix mass = Matrix::Identity(2, 2);
  Matrix stiffness = (Matrix(2, 2) << 4.0, -0.5, 0.5, 4.0).finished();
  Matrix damping = 0.5 * Matrix::Identity(2, 2);
  double cubic = 1.0;  // k_n, acting on the first coordinate
  double dt = 0.01;
  Index steps = 500;
  Forcing forcing = Forcing::Random;
  double force_std = 1.0;       // zero-order-hold Gaussian force per step
  double initial_range = 1.0;   // initial state drawn uniformly from [-r, r]
  /// Replace K by [[k11, k12], [k12, k22]] (the upper triangle mirrored).
  bool symmetric_stiffness = false;
  std::uint64_t seed = 0;

  Index dof() const { return mass.rows(); }
  /// Stiffness actually integrated (mirrored when symmetric_stiffness is set).
  Matrix effective_stiffness() const;
  /// Throws ContractError naming the offending field.
  void validate() const;
};

class SimulationError : public NumericalError {
 public:
  SimulationError(const std::string& what, std::size_t trajectory, std::size_t step)
      : NumericalError(what), trajectory_(trajectory), step_(step) {}
  std::size_t trajectory() const noexcept { return trajectory_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t trajectory_;
  std::size_t step_;
};

using Derivative = std::function<Vector(double t, const Vector& z)>;

/// Classical four-stage Runge-Kutta step.
Vector rk4_step(const Vector& z, double t, double dt, const Derivative& f);

/// d/dt [x; v] for the state z = [x; v] under force `u`.
Vector duffing_derivative(const DuffingConfig& cfg, const Matrix& mass_inv, const Matrix& stiffness,
                          const Vector& z, const Vector& u);

/// Integrates from z0 under a zero-order-hold force sequence (steps x dof).
/// Returns the states after each step (steps x 2 dof). Throws SimulationError
/// when any state component exceeds 1e6 in magnitude.
Matrix integrate_duffing(const DuffingConfig& cfg, const Vector& z0, const Matrix& forces,
                         std::size_t trajectory_index = 0);

/// `n` trajectories: forces as inputs u (one per DOF, zero when free) and the
/// displacements as observations. Row k holds u_k and the displacement after
/// integrating one step under u_k.
TimeSeriesDataset simulate_duffing(const DuffingConfig& cfg, std::size_t n);

}  // namespace nekf
