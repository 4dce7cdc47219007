#pragma once

// Plain Eigen tanh network with its input Jacobian, independent of the tape.

#include "nekf/mlp.hpp"

namespace nekf::testing {

struct ReferenceNet {
  MlpParams p;
  bool tanh = true;

  Vector forward(const Vector& x) const {
    Vector h = x;
    for (std::size_t k = 0; k < p.weights.size(); ++k) {
      h = p.weights[k] * h + p.biases[k];
      if (tanh && k + 1 < p.weights.size()) h = h.array().tanh().matrix();
    }
    return h;
  }

  /// d forward / d x[:cols]
  Matrix jacobian(const Vector& x, Index cols) const {
    Vector h = x;
    Matrix j = Matrix::Identity(x.size(), x.size()).leftCols(cols);
    for (std::size_t k = 0; k < p.weights.size(); ++k) {
      Vector a = p.weights[k] * h + p.biases[k];
      j = p.weights[k] * j;
      if (tanh && k + 1 < p.weights.size()) {
        h = a.array().tanh().matrix();
        j = (1.0 - h.array().square()).matrix().asDiagonal() * j;
      } else {
        h = a;
      }
    }
    return j;
  }
};

}  // namespace nekf::testing
