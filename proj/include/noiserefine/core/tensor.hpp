#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nr {

/// Column-major batch of flattened samples: one column per sample.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  /// Copies a column of `m` into a tensor of the given shape.
  static Tensor from_column(const Matrix& m, Eigen::Index col, Shape shape);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  Eigen::Map<const Vector> vec() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<Vector> vec() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  double squared_norm() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);

/// Throws ShapeMismatch naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what);
/// Throws NumericError naming `what` if any entry is NaN/Inf.
void require_finite(const Tensor& t, std::string_view what);
void require_finite(const Matrix& m, std::string_view what);

/// Stacks equally shaped tensors into columns.
Matrix stack_columns(std::span<const Tensor> items);
std::vector<Tensor> unstack_columns(const Matrix& m, const Shape& shape);

/// Shape [C, H, W] of an image.
struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;

  std::size_t size() const { return channels * height * width; }
  Shape shape() const { return {channels, height, width}; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

}  // namespace nr
