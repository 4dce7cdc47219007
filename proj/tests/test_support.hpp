#pragma once

// Shared oracles for the unit and acceptance suites: seeded random matrices
// and central finite differences, kept independent of the code under test.

#include "nekf/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace nekf::testing {

inline Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  return m;
}

/// B B^T / n + shift I, well conditioned for small n.
inline Matrix random_spd(std::mt19937_64& rng, Index n, double shift = 0.5) {
  Matrix b = random_matrix(rng, n, n);
  Matrix a = b * b.transpose() / static_cast<double>(n);
  a.diagonal().array() += shift;
  return 0.5 * (a + a.transpose());
}

using Graph = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

/// Builds `graph` on fresh leaves, returns its value.
inline double evaluate(const Graph& graph, const std::vector<Matrix>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const Matrix& m : inputs) leaves.push_back(tape.constant(m));
  return graph(tape, leaves).scalar();
}

/// Reverse-mode gradients of `graph` with respect to every input.
inline std::vector<Matrix> reverse_gradients(const Graph& graph, const std::vector<Matrix>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const Matrix& m : inputs) leaves.push_back(tape.variable(m));
  ad::Var out = graph(tape, leaves);
  tape.backward(out);
  std::vector<Matrix> g;
  for (const ad::Var& v : leaves) g.push_back(v.grad());
  return g;
}

/// Central differences (f(x+h) - f(x-h)) / 2h for every entry of every input.
inline std::vector<Matrix> fd_gradients(const std::function<double(const std::vector<Matrix>&)>& f,
                                        std::vector<Matrix> inputs, double h) {
  std::vector<Matrix> g;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Matrix gk(inputs[k].rows(), inputs[k].cols());
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k](i);
      inputs[k](i) = x0 + h;
      const double fp = f(inputs);
      inputs[k](i) = x0 - h;
      const double fm = f(inputs);
      inputs[k](i) = x0;
      gk(i) = (fp - fm) / (2.0 * h);
    }
    g.push_back(std::move(gk));
  }
  return g;
}

inline std::vector<Matrix> fd_gradients(const Graph& graph, const std::vector<Matrix>& inputs,
                                        double h) {
  return fd_gradients([&](const std::vector<Matrix>& x) { return evaluate(graph, x); }, inputs, h);
}

struct GradientComparison {
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::size_t compared = 0;
};

/// Relative error |a - f| / max(|a|, |f|) over entries with max(|a|, |f|) >=
/// `skip_below`; the absolute error is tracked over all entries.
inline GradientComparison compare(const std::vector<Matrix>& analytic,
                                  const std::vector<Matrix>& numeric, double skip_below = 1e-8) {
  GradientComparison c;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    for (Index i = 0; i < analytic[k].size(); ++i) {
      const double a = analytic[k](i), f = numeric[k](i);
      const double mag = std::max(std::abs(a), std::abs(f));
      c.max_abs = std::max(c.max_abs, std::abs(a - f));
      if (mag < skip_below) continue;
      c.max_rel = std::max(c.max_rel, std::abs(a - f) / mag);
      ++c.compared;
    }
  }
  return c;
}

inline GradientComparison check_gradients(const Graph& graph, const std::vector<Matrix>& inputs,
                                          double h = 1e-5, double skip_below = 1e-8) {
  return compare(reverse_gradients(graph, inputs), fd_gradients(graph, inputs, h), skip_below);
}

/// Fresh directory under the system temp path, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("nekf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace nekf::testing
