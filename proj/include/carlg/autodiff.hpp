// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation of one forward pass. Each node owns its
// value and a gradient buffer; backward() walks the tape in reverse order and
// pushes gradients into parents and, for parameter leaves, into the
// Parameter's own gradient accumulator.

#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace carlg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// A named trainable tensor. The gradient is accumulated across tapes until
// the optimizer consumes it.
struct Parameter {
  std::string name;
  std::string module;  // "encoder", "decoder", "cca", "rlig", "span", ...
  std::string group;   // learning-rate group: "backbone" or "head"
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  // A differentiable leaf whose gradient is read back through Var::grad().
  Var input(Matrix value) { return push(std::move(value), true, nullptr); }

  Var param(Parameter& p) {
    Var v = push(p.value, true, nullptr);
    nodes_[v.id()].param = &p;
    return v;
  }

  Var push(Matrix value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  const Matrix& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Seeds d(loss)/d(loss) = scale and propagates. The loss must be 1x1.
  void backward(Var loss, double scale = 1.0) {
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw std::invalid_argument("backward() needs a scalar loss");
    }
    nodes_[loss.id()].grad = Matrix::Constant(1, 1, scale);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param != nullptr) {
        Parameter& p = *n.param;
        if (p.grad.size() == 0) p.zero_grad();
        p.grad += n.grad;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const { return tape_->grad(id_); }

namespace detail {

inline void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::logic_error("vars live on different tapes");
}

inline void check_shape(bool ok, const char* op) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch in ") + op);
}

inline bool any_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars) {
    if (v.tape()->requires_grad(v.id())) return true;
  }
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.cols() == b.rows(), "matmul");
  Tape& t = *a.tape();
  Matrix out;
  out.noalias() = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), detail::any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

// a * b^T without materializing the transpose on the tape.
inline Var matmul_nt(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.cols() == b.cols(), "matmul_nt");
  Tape& t = *a.tape();
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), detail::any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
    if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
  });
}

// Constant left factor: m * a. Used for span averaging matrices.
inline Var lmul(const Matrix& m, Var a) {
  detail::check_shape(m.cols() == a.rows(), "lmul");
  Tape& t = *a.tape();
  Matrix out;
  out.noalias() = m * a.value();
  const int ia = a.id();
  return t.push(std::move(out), detail::any_grad({a}), [ia, m](Tape& t, int self) {
    t.accumulate(ia, m.transpose() * t.grad(self));
  });
}

inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), detail::any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), detail::any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

// Adds row vector `row` (1 x n) to every row of `a` (m x n).
inline Var add_row(Var a, Var row) {
  detail::check_same_tape(a, row);
  detail::check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Tape& t = *a.tape();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  const int ia = a.id(), ir = row.id();
  return t.push(std::move(out), detail::any_grad({a, row}), [ia, ir](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

inline Var mul(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), detail::any_grad({a, b}),
                [ia, ib](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                  if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                });
}

// Elementwise product of every row of `a` with row vector `row`.
inline Var mul_row(Var a, Var row) {
  detail::check_same_tape(a, row);
  detail::check_shape(row.rows() == 1 && row.cols() == a.cols(), "mul_row");
  Tape& t = *a.tape();
  Matrix out = a.value();
  out.array().rowwise() *= row.value().row(0).array();
  const int ia = a.id(), ir = row.id();
  return t.push(std::move(out), detail::any_grad({a, row}), [ia, ir](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& r = t.value(ir);
    if (t.requires_grad(ia)) {
      Matrix ga = g;
      ga.array().rowwise() *= r.row(0).array();
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ir)) {
      t.accumulate(ir, g.cwiseProduct(t.value(ia)).colwise().sum());
    }
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.push(a.value() * s, detail::any_grad({a}), [ia, s](Tape& t, int self) {
    t.accumulate(ia, t.grad(self) * s);
  });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.push(a.value().transpose(), detail::any_grad({a}), [ia](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).transpose());
  });
}

inline Var sum(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.push(Matrix::Constant(1, 1, a.value().sum()), detail::any_grad({a}),
                [ia](Tape& t, int self) {
                  const Matrix& v = t.value(ia);
                  t.accumulate(ia, Matrix::Constant(v.rows(), v.cols(), t.grad(self)(0, 0)));
                });
}

inline Var sum(const std::vector<Var>& vs) {
  if (vs.empty()) throw std::invalid_argument("sum of no vars");
  Var acc = vs.front();
  for (std::size_t i = 1; i < vs.size(); ++i) acc = add(acc, vs[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var tanh(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix out = a.value().array().tanh().matrix();
  return t.push(std::move(out), detail::any_grad({a}), [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return t.push(std::move(out), detail::any_grad({a}), [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

// GELU, tanh approximation. Smooth everywhere, which keeps finite-difference
// checks meaningful.
inline Var gelu(Var a) {
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::ArrayXXd x = a.value().array();
  const Eigen::ArrayXXd u = (kC * (x + kA * x.cube())).tanh();
  Matrix out = (0.5 * x * (1.0 + u)).matrix();
  return t.push(std::move(out), detail::any_grad({a}), [ia](Tape& t, int self) {
    const Eigen::ArrayXXd x = t.value(ia).array();
    const Eigen::ArrayXXd u = (kC * (x + kA * x.cube())).tanh();
    const Eigen::ArrayXXd du = (1.0 - u.square()) * kC * (1.0 + 3.0 * kA * x.square());
    const Eigen::ArrayXXd d = 0.5 * (1.0 + u) + 0.5 * x * du;
    t.accumulate(ia, (t.grad(self).array() * d).matrix());
  });
}

// Row-wise softmax. Every row of the result is a probability distribution.
inline Matrix softmax_rows_value(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.row(r).maxCoeff();
    out.row(r) = (a.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.push(softmax_rows_value(a.value()), detail::any_grad({a}), [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Matrix ga = g;
    ga.colwise() -= dots;
    t.accumulate(ia, ga.cwiseProduct(y));
  });
}

// Divides each row by its sum.
inline Var normalize_rows(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::VectorXd sums = a.value().rowwise().sum();
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) /= sums(r);
  return t.push(std::move(out), detail::any_grad({a}), [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    const Eigen::VectorXd sums = t.value(ia).rowwise().sum();
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Matrix ga = g;
    ga.colwise() -= dots;
    for (Eigen::Index r = 0; r < ga.rows(); ++r) ga.row(r) /= sums(r);
    t.accumulate(ia, ga);
  });
}

// Layer normalization across columns of every row, with learned gain/bias.
inline Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5) {
  detail::check_shape(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm gain");
  detail::check_shape(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm bias");
  Tape& t = *x.tape();
  const Eigen::Index n = x.cols();
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const RowVector centered = xv.row(r).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(n);
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = centered * inv_std(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.push(std::move(out), detail::any_grad({x, gain, bias}),
                [ix, ig, ib, xhat, inv_std, n](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                  if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
                  if (t.requires_grad(ix)) {
                    Matrix gh = g;
                    gh.array().rowwise() *= t.value(ig).row(0).array();
                    Matrix gx(gh.rows(), gh.cols());
                    const double dn = static_cast<double>(n);
                    for (Eigen::Index r = 0; r < gh.rows(); ++r) {
                      const double m1 = gh.row(r).mean();
                      const double m2 = gh.row(r).dot(xhat.row(r)) / dn;
                      gx.row(r) = inv_std(r) *
                                  (gh.row(r).array() - m1 - xhat.row(r).array() * m2).matrix();
                    }
                    t.accumulate(ix, gx);
                  }
                });
}

// ---------------------------------------------------------------------------
// Indexing and concatenation

inline Var gather_rows(Var a, std::vector<int> idx) {
  Tape& t = *a.tape();
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw std::out_of_range("gather_rows index");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  const int ia = a.id();
  return t.push(std::move(out), detail::any_grad({a}), [ia, idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix ga = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(ia, ga);
  });
}

inline Var gather_cols(Var a, std::vector<int> idx) {
  Tape& t = *a.tape();
  Matrix out(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.cols()) throw std::out_of_range("gather_cols index");
    out.col(static_cast<Eigen::Index>(i)) = a.value().col(idx[i]);
  }
  const int ia = a.id();
  return t.push(std::move(out), detail::any_grad({a}), [ia, idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix ga = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) ga.col(idx[i]) += g.col(static_cast<Eigen::Index>(i));
    t.accumulate(ia, ga);
  });
}

inline Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  detail::check_shape(begin >= 0 && begin + count <= a.cols(), "slice_cols");
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.push(a.value().middleCols(begin, count), detail::any_grad({a}),
                [ia, begin, count](Tape& t, int self) {
                  Matrix ga = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
                  ga.middleCols(begin, count) = t.grad(self);
                  t.accumulate(ia, ga);
                });
}

inline Var hcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("hcat of nothing");
  Tape& t = *parts.front().tape();
  Eigen::Index cols = 0;
  bool grad = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    detail::check_shape(p.rows() == parts.front().rows(), "hcat");
    cols += p.cols();
    grad = grad || t.requires_grad(p.id());
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(parts.front().rows(), cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.push(std::move(out), grad, [ids, widths](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.requires_grad(ids[i])) t.accumulate(ids[i], g.middleCols(at, widths[i]));
      at += widths[i];
    }
  });
}

inline Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("vcat of nothing");
  Tape& t = *parts.front().tape();
  Eigen::Index rows = 0;
  bool grad = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  for (const Var& p : parts) {
    detail::check_shape(p.cols() == parts.front().cols(), "vcat");
    rows += p.rows();
    grad = grad || t.requires_grad(p.id());
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  Matrix out(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return t.push(std::move(out), grad, [ids, heights](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.requires_grad(ids[i])) t.accumulate(ids[i], g.middleRows(at, heights[i]));
      at += heights[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

// Summed cross-entropy of row-wise softmax(logits) against one target column
// per row. Rows with a negative target are skipped.
inline Var cross_entropy_rows(Var logits, std::vector<int> targets) {
  detail::check_shape(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "cross_entropy_rows");
  Tape& t = *logits.tape();
  const Matrix probs = softmax_rows_value(logits.value());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    if (y < 0) continue;
    if (y >= probs.cols()) throw std::out_of_range("cross_entropy target");
    const double mx = logits.value().row(r).maxCoeff();
    const double lse = mx + std::log((logits.value().row(r).array() - mx).exp().sum());
    loss += lse - logits.value()(r, y);
  }
  const int il = logits.id();
  return t.push(Matrix::Constant(1, 1, loss), detail::any_grad({logits}),
                [il, probs, targets = std::move(targets)](Tape& t, int self) {
                  const double g = t.grad(self)(0, 0);
                  Matrix gl = Matrix::Zero(probs.rows(), probs.cols());
                  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
                    const int y = targets[static_cast<std::size_t>(r)];
                    if (y < 0) continue;
                    gl.row(r) = probs.row(r) * g;
                    gl(r, y) -= g;
                  }
                  t.accumulate(il, gl);
                });
}

}  // namespace ad
}  // namespace carlg
