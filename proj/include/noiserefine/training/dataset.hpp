#pragma once

#include "noiserefine/core/rng.hpp"
#include "noiserefine/core/tensor.hpp"
#include "noiserefine/nets/networks.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace nr {

enum class ShapeClass : int { disk = 0, square = 1, cross = 2, stripes = 3 };

inline constexpr int kNumShapeClasses = 4;
inline constexpr double kBackground = -1.0;

std::string_view shape_class_name(int cls);

/// Synthetic 16x16 single-channel shapes on a -1 background.
///
/// Every image is a pure function of (class, seed). With `pool_size > 0` the
/// dataset is the finite set of seeds [0, pool_size) per class; otherwise
/// batches draw fresh seeds.
class ShapesDataset {
 public:
  explicit ShapesDataset(std::uint64_t base_seed = 0, std::size_t pool_size = 0,
                         std::vector<int> classes = {0, 1, 2, 3});

  const ImageShape& image_shape() const { return shape_; }
  std::span<const int> classes() const { return classes_; }
  std::size_t pool_size() const { return pool_size_; }

  /// Deterministic image of class `cls` for `seed`.
  Tensor sample(int cls, std::uint64_t seed) const;

  struct Batch {
    Matrix images;
    std::vector<Condition> conds;
  };
  /// Random classes and seeds drawn from `rng`.
  Batch batch(RngStream& rng, std::size_t size) const;
  /// `count` images of one class; the i-th uses seed offset + i (mod pool when finite).
  Matrix class_samples(int cls, std::size_t count, std::uint64_t offset = 0) const;

 private:
  std::uint64_t resolve_seed(std::uint64_t index) const;

  ImageShape shape_;
  std::uint64_t base_seed_;
  std::size_t pool_size_;
  std::vector<int> classes_;
};

}  // namespace nr
