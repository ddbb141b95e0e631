#pragma once

#include "noiserefine/core/tensor.hpp"

#include <deque>
#include <functional>

namespace nr::ad {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  bool requires_grad() const;
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Parameters of one dense layer viewed inside a flat parameter vector.
/// Gradients accumulate into the optional sinks.
struct LinearParams {
  Eigen::Map<const Matrix> weight;  // out x in
  Eigen::Map<const Vector> bias;    // out
  double* weight_grad = nullptr;
  double* bias_grad = nullptr;
};

Matrix dense_forward(const LinearParams& p, const Matrix& x);
Matrix silu_forward(const Matrix& x);
/// Column j of the result is a[j] * x.col(j) + b[j] * y.col(j).
Matrix column_axpby_forward(const Vector& a, const Matrix& x, const Vector& b, const Matrix& y);

/// Records matrix-valued operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order. A tape is single-threaded and single-use per
/// backward pass; create one per worker.
class Tape {
 public:
  Var constant(Matrix value);
  /// Leaf whose gradient is retained.
  Var input(Matrix value);

  Var linear(Var x, const LinearParams& p);
  Var silu(Var x);
  /// a * x + b * y
  Var axpby(double a, Var x, double b, Var y);
  Var add(Var x, Var y) { return axpby(1.0, x, 1.0, y); }
  /// Per-column coefficients; see column_axpby_forward.
  Var column_axpby(const Vector& a, Var x, const Vector& b, Var y);
  Var scale(double a, Var x);
  Var add_constant(Var x, const Matrix& c);
  /// Stop-gradient: same value, no gradient flows to anything upstream.
  Var detach(Var x);
  /// Vertical concatenation [x; extra] where `extra` is a constant.
  Var append_rows(Var x, const Matrix& extra);
  /// Mean over all entries of (x - target)^2, as a 1x1 node.
  Var mean_squared_error(Var x, const Matrix& target);
  /// Sum of all entries, as a 1x1 node.
  Var sum(Var x);

  /// Seeds d(root) = 1 for a 1x1 root.
  void backward(Var root);
  void backward(Var root, const Matrix& seed);

  /// Gradient of the last backward pass; zeros if the node was never reached.
  Matrix grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn fn);
  void accumulate(int id, const Matrix& g);
  Node& node(Var v);
  const Node& node(Var v) const;

  std::deque<Node> nodes_;
};

}  // namespace nr::ad
