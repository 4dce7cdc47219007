#pragma once

// Dense matrix reverse-mode automatic differentiation.
//
// A Tape records every operation applied to its Vars in append order. Calling
// backward() on a 1x1 result walks the tape in reverse and accumulates
// gradients into every node that requires them. Tapes are rebuilt for each
// loss evaluation and are not thread-safe; independent tapes may be used from
// different threads.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace nekf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid as long as its tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Accumulated gradient; a zero matrix if nothing has flowed in yet.
  Matrix grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  /// Value of a 1x1 node.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the upstream gradient of the node it is attached to and
  /// distributes contributions to the node's inputs via accumulate().
  using BackwardFn = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad);
  Var constant(Matrix value) { return leaf(std::move(value), false); }
  Var variable(Matrix value) { return leaf(std::move(value), true); }
  Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  /// Appends a node computed from `inputs`. Its id is size() at the time of
  /// the call, which lets a backward rule refer to its own output. The rule
  /// is kept only if at least one input requires a gradient. Throws
  /// NumericalError if `value` holds NaN or Inf.
  Var record(const char* op, Matrix value, std::initializer_list<Var> inputs,
             BackwardFn backward);
  Var record(const char* op, Matrix value, std::span<const Var> inputs, BackwardFn backward);

  /// Reverse sweep from a 1x1 node. Leaf gradients accumulate across calls;
  /// interior gradients are reset at the start of each sweep.
  void backward(const Var& loss);
  void zero_grad();

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Matrix grad(std::size_t id) const;
  void accumulate(std::size_t id, const Matrix& g);
  void accumulate(const Var& v, const Matrix& g) { accumulate(v.id(), g); }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // empty until something accumulates into it
    bool requires_grad = false;
    bool is_leaf = true;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---- structural ------------------------------------------------------------

Var transpose(const Var& a);
/// Block [row, row+rows) x [col, col+cols).
Var slice(const Var& a, Index row, Index col, Index rows, Index cols);
Var vcat(const Var& top, const Var& bottom);
Var hcat(const Var& left, const Var& right);
/// Column vector -> diagonal matrix.
Var diag(const Var& v);
/// Square matrix -> column vector of its diagonal.
Var diagonal(const Var& a);

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var hadamard(const Var& a, const Var& b);
Var add_identity(const Var& a, double s);
Var tanh(const Var& a);
/// 1 - tanh(a)^2, differentiable itself.
Var tanh_derivative(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

// ---- products and reductions ----------------------------------------------

Var matmul(const Var& a, const Var& b);
/// diag(v) * m without forming the diagonal matrix.
Var scale_rows(const Var& v, const Var& m);
Var trace(const Var& a);
Var sum(const Var& a);
/// Sum of equally shaped nodes as a single tape entry.
Var add_n(std::span<const Var> terms);

// ---- symmetric positive definite ------------------------------------------

/// Lower-triangular L with L L^T = a and positive diagonal.
Var cholesky(const Var& a);
/// Solves a x = b for SPD a without forming the inverse.
Var solve_spd(const Var& a, const Var& b);
/// log|a| for SPD a, computed from its Cholesky factor.
Var logdet_spd(const Var& a);
/// v^T a^{-1} v for SPD a and column vector v.
Var quad_form(const Var& v, const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return matmul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

/// Plain Cholesky factorization used by the SPD operations. Throws
/// DecompositionError naming the failing pivot.
Matrix cholesky_factor(const Matrix& a);

}  // namespace ad
}  // namespace nekf
