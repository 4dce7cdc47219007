#include "nekf/autodiff.hpp"

#include "nekf/errors.hpp"

#include <cmath>
#include <sstream>
#include <string>

namespace nekf::ad {

namespace {

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw ContractError("operands live on different tapes");
  }
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape(a.value()) +
                         " vs " + shape(b.value()));
  }
}

void require_symmetric(const char* op, const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw DimensionError(std::string(op) + ": expected a square matrix, got " + shape(a));
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw ContractError(std::string(op) + ": matrix is not symmetric within 1e-9");
  }
}

// A^{-1} B given the lower Cholesky factor of A.
Matrix chol_solve(const Matrix& l, const Matrix& b) {
  Matrix y = l.triangularView<Eigen::Lower>().solve(b);
  return l.transpose().triangularView<Eigen::Upper>().solve(y);
}

}  // namespace

// ---- Var -------------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }
Matrix Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("scalar(): node is " + shape(v) + ", not 1x1");
  }
  return v(0, 0);
}

// ---- Tape ------------------------------------------------------------------

Var Tape::leaf(Matrix value, bool requires_grad) {
  if (!value.allFinite()) throw NumericalError("leaf: non-finite value");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Matrix value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(const char* op, Matrix value, std::span<const Var> inputs,
                 BackwardFn backward) {
  if (!value.allFinite()) {
    throw NumericalError(std::string(op) + ": produced a non-finite value");
  }
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw ContractError(std::string(op) + ": input from another tape");
    needs = needs || nodes_[in.id_].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  n.is_leaf = false;
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Matrix Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw ContractError("backward: loss belongs to another tape");
  const Matrix& lv = nodes_[loss.id_].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward: loss must be 1x1, got " + shape(lv));
  }
  for (Node& n : nodes_) {
    if (!n.is_leaf) n.grad.resize(0, 0);
  }
  if (!nodes_[loss.id_].requires_grad) return;
  accumulate(loss.id_, Matrix::Ones(1, 1));
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.is_leaf || n.grad.size() == 0 || !n.backward) continue;
    // The closure may append to accumulators of earlier nodes only, so the
    // reference to this node's gradient stays valid.
    n.backward(*this, n.grad);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.resize(0, 0);
}

// ---- structural ------------------------------------------------------------

Var transpose(const Var& a) {
  const std::size_t ia = a.id();
  return a.tape().record("transpose", a.value().transpose(), {a},
                         [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g.transpose()); });
}

Var slice(const Var& a, Index row, Index col, Index rows, Index cols) {
  if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > a.rows() ||
      col + cols > a.cols()) {
    throw DimensionError("slice: block out of range of " + shape(a.value()));
  }
  const std::size_t ia = a.id();
  const Index ar = a.rows(), ac = a.cols();
  return a.tape().record("slice", a.value().block(row, col, rows, cols), {a},
                         [=](Tape& t, const Matrix& g) {
                           Matrix full = Matrix::Zero(ar, ac);
                           full.block(row, col, rows, cols) = g;
                           t.accumulate(ia, full);
                         });
}

Var vcat(const Var& top, const Var& bottom) {
  require_same_tape(top, bottom);
  if (top.cols() != bottom.cols()) {
    throw DimensionError("vcat: column mismatch " + shape(top.value()) + " vs " +
                         shape(bottom.value()));
  }
  Matrix v(top.rows() + bottom.rows(), top.cols());
  v << top.value(), bottom.value();
  const std::size_t it = top.id(), ib = bottom.id();
  const Index tr = top.rows(), br = bottom.rows();
  return top.tape().record("vcat", std::move(v), {top, bottom},
                           [=](Tape& t, const Matrix& g) {
                             t.accumulate(it, g.topRows(tr));
                             t.accumulate(ib, g.bottomRows(br));
                           });
}

Var hcat(const Var& left, const Var& right) {
  require_same_tape(left, right);
  if (left.rows() != right.rows()) {
    throw DimensionError("hcat: row mismatch " + shape(left.value()) + " vs " +
                         shape(right.value()));
  }
  Matrix v(left.rows(), left.cols() + right.cols());
  v << left.value(), right.value();
  const std::size_t il = left.id(), ir = right.id();
  const Index lc = left.cols(), rc = right.cols();
  return left.tape().record("hcat", std::move(v), {left, right},
                            [=](Tape& t, const Matrix& g) {
                              t.accumulate(il, g.leftCols(lc));
                              t.accumulate(ir, g.rightCols(rc));
                            });
}

Var diag(const Var& v) {
  if (v.cols() != 1) throw DimensionError("diag: expected a column vector, got " + shape(v.value()));
  const std::size_t iv = v.id();
  Matrix d = v.value().col(0).asDiagonal();
  return v.tape().record("diag", std::move(d), {v},
                         [iv](Tape& t, const Matrix& g) { t.accumulate(iv, g.diagonal()); });
}

Var diagonal(const Var& a) {
  if (a.rows() != a.cols()) throw DimensionError("diagonal: non-square " + shape(a.value()));
  const std::size_t ia = a.id();
  return a.tape().record("diagonal", a.value().diagonal(), {a},
                         [ia](Tape& t, const Matrix& g) {
                           Matrix d = g.col(0).asDiagonal();
                           t.accumulate(ia, d);
                         });
}

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape("add", a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape("sub", a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var scale(const Var& a, double s) {
  const std::size_t ia = a.id();
  return a.tape().record("scale", s * a.value(), {a},
                         [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, s * g); });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape("hadamard", a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("hadamard", a.value().cwiseProduct(b.value()), {a, b},
                         [ia, ib](Tape& t, const Matrix& g) {
                           t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                           t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                         });
}

Var add_identity(const Var& a, double s) {
  if (a.rows() != a.cols()) throw DimensionError("add_identity: non-square " + shape(a.value()));
  Matrix v = a.value();
  v.diagonal().array() += s;
  const std::size_t ia = a.id();
  return a.tape().record("add_identity", std::move(v), {a},
                         [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

Var tanh(const Var& a) {
  const std::size_t ia = a.id();
  const std::size_t self = a.tape().size();
  return a.tape().record("tanh", a.value().array().tanh().matrix(), {a},
                         [ia, self](Tape& t, const Matrix& g) {
                           const Matrix& th = t.value(self);
                           t.accumulate(ia, (g.array() * (1.0 - th.array().square())).matrix());
                         });
}

Var tanh_derivative(const Var& a) {
  const std::size_t ia = a.id();
  Matrix th = a.value().array().tanh().matrix();
  Matrix v = (1.0 - th.array().square()).matrix();
  return a.tape().record("tanh_derivative", std::move(v), {a},
                         [ia](Tape& t, const Matrix& g) {
                           Matrix th = t.value(ia).array().tanh().matrix();
                           // d/dx (1 - tanh^2) = -2 tanh (1 - tanh^2)
                           Matrix d = (-2.0 * th.array() * (1.0 - th.array().square())).matrix();
                           t.accumulate(ia, g.cwiseProduct(d));
                         });
}

Var exp(const Var& a) {
  const std::size_t ia = a.id();
  return a.tape().record("exp", a.value().array().exp().matrix(), {a},
                         [ia](Tape& t, const Matrix& g) {
                           t.accumulate(ia, g.cwiseProduct(t.value(ia).array().exp().matrix()));
                         });
}

Var log(const Var& a) {
  if ((a.value().array() <= 0.0).any()) throw ContractError("log: non-positive argument");
  const std::size_t ia = a.id();
  return a.tape().record("log", a.value().array().log().matrix(), {a},
                         [ia](Tape& t, const Matrix& g) {
                           t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
                         });
}

// ---- products and reductions ----------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape(a.value()) + " by " +
                         shape(b.value()));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", a.value() * b.value(), {a, b},
                         [ia, ib](Tape& t, const Matrix& g) {
                           if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                           if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                         });
}

Var scale_rows(const Var& v, const Var& m) {
  require_same_tape(v, m);
  if (v.cols() != 1 || v.rows() != m.rows()) {
    throw DimensionError("scale_rows: vector " + shape(v.value()) + " does not match " +
                         shape(m.value()));
  }
  const std::size_t iv = v.id(), im = m.id();
  Matrix out = v.value().col(0).asDiagonal() * m.value();
  return v.tape().record("scale_rows", std::move(out), {v, m},
                         [iv, im](Tape& t, const Matrix& g) {
                           const Matrix& vv = t.value(iv);
                           const Matrix& mm = t.value(im);
                           if (t.requires_grad(im)) t.accumulate(im, vv.col(0).asDiagonal() * g);
                           if (t.requires_grad(iv)) {
                             t.accumulate(iv, g.cwiseProduct(mm).rowwise().sum());
                           }
                         });
}

Var trace(const Var& a) {
  if (a.rows() != a.cols()) throw DimensionError("trace: non-square " + shape(a.value()));
  const std::size_t ia = a.id();
  const Index n = a.rows();
  return a.tape().record("trace", Matrix::Constant(1, 1, a.value().trace()), {a},
                         [ia, n](Tape& t, const Matrix& g) {
                           t.accumulate(ia, g(0, 0) * Matrix::Identity(n, n));
                         });
}

Var sum(const Var& a) {
  const std::size_t ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.tape().record("sum", Matrix::Constant(1, 1, a.value().sum()), {a},
                         [ia, r, c](Tape& t, const Matrix& g) {
                           t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                         });
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw ContractError("add_n: no terms");
  Tape& tape = terms.front().tape();
  Matrix v = terms.front().value();
  std::vector<std::size_t> ids;
  ids.reserve(terms.size());
  ids.push_back(terms.front().id());
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require_same_tape(terms.front(), terms[i]);
    require_same_shape("add_n", terms.front(), terms[i]);
    v += terms[i].value();
    ids.push_back(terms[i].id());
  }
  return tape.record("add_n", std::move(v), terms, [ids](Tape& t, const Matrix& g) {
    for (std::size_t id : ids) t.accumulate(id, g);
  });
}

// ---- symmetric positive definite ------------------------------------------

Matrix cholesky_factor(const Matrix& a) {
  const Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw DecompositionError("cholesky: matrix is not positive definite (pivot " +
                                   std::to_string(j) + ", value " + std::to_string(d) + ")",
                               static_cast<std::size_t>(j));
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Index i = j + 1; i < n; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / ljj;
    }
  }
  return l;
}

Var cholesky(const Var& a) {
  require_symmetric("cholesky", a.value());
  const std::size_t ia = a.id();
  const std::size_t self = a.tape().size();
  return a.tape().record("cholesky", cholesky_factor(a.value()), {a},
                         [ia, self](Tape& t, const Matrix& g) {
                           const Matrix& lf = t.value(self);
                           Matrix lbar = g.triangularView<Eigen::Lower>();
                           Matrix p = lf.transpose() * lbar;
                           p = p.triangularView<Eigen::Lower>();
                           p.diagonal() *= 0.5;
                           // S = L^{-T} P L^{-1}, symmetrized
                           Matrix x = lf.transpose().triangularView<Eigen::Upper>().solve(p);
                           Matrix s = lf.transpose()
                                          .triangularView<Eigen::Upper>()
                                          .solve(x.transpose())
                                          .transpose();
                           t.accumulate(ia, 0.5 * (s + s.transpose()));
                         });
}

Var solve_spd(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_symmetric("solve_spd", a.value());
  if (a.rows() != b.rows()) {
    throw DimensionError("solve_spd: " + shape(a.value()) + " system with right-hand side " +
                         shape(b.value()));
  }
  Matrix l = cholesky_factor(a.value());
  Matrix x = chol_solve(l, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t self = a.tape().size();
  return a.tape().record("solve_spd", std::move(x), {a, b},
                         [ia, ib, self, l = std::move(l)](Tape& t, const Matrix& g) {
                           Matrix bbar = chol_solve(l, g);
                           if (t.requires_grad(ia)) {
                             t.accumulate(ia, -bbar * t.value(self).transpose());
                           }
                           if (t.requires_grad(ib)) t.accumulate(ib, bbar);
                         });
}

Var logdet_spd(const Var& a) {
  require_symmetric("logdet_spd", a.value());
  Matrix l = cholesky_factor(a.value());
  const double ld = 2.0 * l.diagonal().array().log().sum();
  const std::size_t ia = a.id();
  return a.tape().record("logdet_spd", Matrix::Constant(1, 1, ld), {a},
                         [ia, l = std::move(l)](Tape& t, const Matrix& g) {
                           const Index n = l.rows();
                           Matrix inv = chol_solve(l, Matrix::Identity(n, n));
                           t.accumulate(ia, g(0, 0) * inv);
                         });
}

Var quad_form(const Var& v, const Var& a) {
  require_same_tape(v, a);
  require_symmetric("quad_form", a.value());
  if (v.cols() != 1 || v.rows() != a.rows()) {
    throw DimensionError("quad_form: vector " + shape(v.value()) + " against matrix " +
                         shape(a.value()));
  }
  Matrix l = cholesky_factor(a.value());
  Vector y = chol_solve(l, v.value());
  const double q = v.value().col(0).dot(y);
  const std::size_t iv = v.id(), ia = a.id();
  return v.tape().record("quad_form", Matrix::Constant(1, 1, q), {v, a},
                         [iv, ia, y = std::move(y)](Tape& t, const Matrix& g) {
                           const double s = g(0, 0);
                           if (t.requires_grad(iv)) t.accumulate(iv, 2.0 * s * y);
                           if (t.requires_grad(ia)) t.accumulate(ia, -s * (y * y.transpose()));
                         });
}

}  // namespace nekf::ad
