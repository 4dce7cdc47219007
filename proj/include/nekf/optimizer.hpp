#pragma once

#include "nekf/autodiff.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace nekf {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moment estimates, one pair per parameter tensor.
struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(std::span<const Matrix* const> params);
};

/// One bias-corrected Adam update that descends along `grads`.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               const AdamConfig& cfg);

double global_norm(std::span<const Matrix> tensors);

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping. A non-positive `max_norm` disables it.
double clip_global_norm(std::span<Matrix> grads, double max_norm);

}  // namespace nekf
