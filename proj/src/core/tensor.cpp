#include "noiserefine/core/tensor.hpp"

#include "noiserefine/core/errors.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace nr {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::from_column(const Matrix& m, Eigen::Index col, Shape shape) {
  Tensor t(std::move(shape));
  if (static_cast<Eigen::Index>(t.size()) != m.rows()) {
    throw ShapeMismatch("column of length " + std::to_string(m.rows()) + " cannot fill shape " +
                        shape_string(t.shape()));
  }
  t.vec() = m.col(col);
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::squared_norm() const { return vec().squaredNorm(); }

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

void require_finite(const Tensor& t, std::string_view what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + ": non-finite value");
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "tensor add");
  Tensor out(a.shape());
  out.vec() = a.vec() + b.vec();
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "tensor subtract");
  Tensor out(a.shape());
  out.vec() = a.vec() - b.vec();
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out(a.shape());
  out.vec() = s * a.vec();
  return out;
}

Matrix stack_columns(std::span<const Tensor> items) {
  if (items.empty()) return {};
  const auto rows = static_cast<Eigen::Index>(items.front().size());
  Matrix m(rows, static_cast<Eigen::Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    require_same_shape(items[i], items.front(), "stack_columns");
    m.col(static_cast<Eigen::Index>(i)) = items[i].vec();
  }
  return m;
}

std::vector<Tensor> unstack_columns(const Matrix& m, const Shape& shape) {
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(Tensor::from_column(m, j, shape));
  return out;
}

}  // namespace nr
