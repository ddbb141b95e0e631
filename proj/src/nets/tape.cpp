#include "noiserefine/nets/tape.hpp"

#include "noiserefine/core/errors.hpp"

namespace nr::ad {

const Matrix& Var::value() const { return tape_->node(*this).value; }
bool Var::requires_grad() const { return tape_->node(*this).requires_grad; }

Matrix dense_forward(const LinearParams& p, const Matrix& x) {
  Matrix y(p.weight.rows(), x.cols());
  y.noalias() = p.weight * x;
  y.colwise() += p.bias;
  return y;
}

Matrix silu_forward(const Matrix& x) {
  return x.array() / (1.0 + (-x.array()).exp());
}

Tape::Node& Tape::node(Var v) {
  if (v.tape_ != this || v.id_ < 0 || v.id_ >= static_cast<int>(nodes_.size())) {
    throw InvalidArgument("variable does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id_)];
}

const Tape::Node& Tape::node(Var v) const { return const_cast<Tape*>(this)->node(v); }

Var Tape::push(Matrix value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::input(Matrix value) { return push(std::move(value), true, [](Tape&, const Matrix&) {}); }

Var Tape::linear(Var x, const LinearParams& p) {
  const Matrix& xv = node(x).value;
  if (xv.rows() != p.weight.cols()) throw ShapeMismatch("linear: input rows do not match weight columns");
  const bool needs = node(x).requires_grad || p.weight_grad != nullptr || p.bias_grad != nullptr;
  const int xid = x.id_;
  return push(dense_forward(p, xv), needs, [xid, p](Tape& t, const Matrix& g) {
    const Node& in = t.nodes_[static_cast<std::size_t>(xid)];
    if (p.weight_grad != nullptr) {
      Eigen::Map<Matrix> gw(p.weight_grad, p.weight.rows(), p.weight.cols());
      gw.noalias() += g * in.value.transpose();
    }
    if (p.bias_grad != nullptr) {
      Eigen::Map<Vector> gb(p.bias_grad, p.bias.size());
      gb += g.rowwise().sum();
    }
    if (in.requires_grad) {
      Matrix gx(p.weight.cols(), g.cols());
      gx.noalias() = p.weight.transpose() * g;
      t.accumulate(xid, gx);
    }
  });
}

Var Tape::silu(Var x) {
  const int xid = x.id_;
  return push(silu_forward(node(x).value), node(x).requires_grad, [xid](Tape& t, const Matrix& g) {
    const auto xa = t.nodes_[static_cast<std::size_t>(xid)].value.array();
    const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-xa).exp());
    t.accumulate(xid, (g.array() * sig * (1.0 + xa * (1.0 - sig))).matrix());
  });
}

Var Tape::axpby(double a, Var x, double b, Var y) {
  const Matrix& xv = node(x).value;
  const Matrix& yv = node(y).value;
  if (xv.rows() != yv.rows() || xv.cols() != yv.cols()) throw ShapeMismatch("axpby: shapes differ");
  const int xid = x.id_, yid = y.id_;
  Matrix out = a * xv + b * yv;
  return push(std::move(out), node(x).requires_grad || node(y).requires_grad,
              [a, b, xid, yid](Tape& t, const Matrix& g) {
                t.accumulate(xid, a * g);
                t.accumulate(yid, b * g);
              });
}

Matrix column_axpby_forward(const Vector& a, const Matrix& x, const Vector& b, const Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw ShapeMismatch("column_axpby: shapes differ");
  if (a.size() != x.cols() || b.size() != x.cols()) throw ShapeMismatch("column_axpby: one coefficient per column");
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = a[j] * x.col(j) + b[j] * y.col(j);
  return out;
}

Var Tape::column_axpby(const Vector& a, Var x, const Vector& b, Var y) {
  Matrix out = column_axpby_forward(a, node(x).value, b, node(y).value);
  const int xid = x.id_, yid = y.id_;
  return push(std::move(out), node(x).requires_grad || node(y).requires_grad,
              [a, b, xid, yid](Tape& t, const Matrix& g) {
                t.accumulate(xid, g * a.asDiagonal());
                t.accumulate(yid, g * b.asDiagonal());
              });
}

Var Tape::scale(double a, Var x) {
  const int xid = x.id_;
  return push(a * node(x).value, node(x).requires_grad,
              [a, xid](Tape& t, const Matrix& g) { t.accumulate(xid, a * g); });
}

Var Tape::add_constant(Var x, const Matrix& c) {
  const Matrix& xv = node(x).value;
  if (xv.rows() != c.rows() || xv.cols() != c.cols()) throw ShapeMismatch("add_constant: shapes differ");
  const int xid = x.id_;
  return push(xv + c, node(x).requires_grad, [xid](Tape& t, const Matrix& g) { t.accumulate(xid, g); });
}

Var Tape::detach(Var x) { return push(node(x).value, false, nullptr); }

Var Tape::append_rows(Var x, const Matrix& extra) {
  const Matrix& xv = node(x).value;
  if (xv.cols() != extra.cols()) throw ShapeMismatch("append_rows: column counts differ");
  Matrix out(xv.rows() + extra.rows(), xv.cols());
  out << xv, extra;
  const int xid = x.id_;
  const Eigen::Index rows = xv.rows();
  return push(std::move(out), node(x).requires_grad,
              [xid, rows](Tape& t, const Matrix& g) { t.accumulate(xid, g.topRows(rows)); });
}

Var Tape::mean_squared_error(Var x, const Matrix& target) {
  const Matrix& xv = node(x).value;
  if (xv.rows() != target.rows() || xv.cols() != target.cols()) throw ShapeMismatch("mse: shapes differ");
  const double n = static_cast<double>(xv.size());
  Matrix diff = xv - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  const int xid = x.id_;
  return push(std::move(out), node(x).requires_grad, [xid, diff = std::move(diff), n](Tape& t, const Matrix& g) {
    t.accumulate(xid, (2.0 * g(0, 0) / n) * diff);
  });
}

Var Tape::sum(Var x) {
  const Matrix& xv = node(x).value;
  Matrix out(1, 1);
  out(0, 0) = xv.sum();
  const int xid = x.id_;
  const Eigen::Index r = xv.rows(), c = xv.cols();
  return push(std::move(out), node(x).requires_grad, [xid, r, c](Tape& t, const Matrix& g) {
    t.accumulate(xid, Matrix::Constant(r, c, g(0, 0)));
  });
}

void Tape::backward(Var root) {
  if (node(root).value.size() != 1) throw ShapeMismatch("backward: root must be scalar without an explicit seed");
  backward(root, Matrix::Ones(1, 1));
}

void Tape::backward(Var root, const Matrix& seed) {
  const Matrix& rv = node(root).value;
  if (seed.rows() != rv.rows() || seed.cols() != rv.cols()) throw ShapeMismatch("backward: seed shape differs");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(root.id_, seed);
  for (int id = root.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

}  // namespace nr::ad
