#include "noiserefine/training/dataset.hpp"

#include "noiserefine/core/errors.hpp"

#include <cmath>

namespace nr {

std::string_view shape_class_name(int cls) {
  switch (cls) {
    case 0: return "disk";
    case 1: return "square";
    case 2: return "cross";
    case 3: return "stripes";
    default: return "unknown";
  }
}

ShapesDataset::ShapesDataset(std::uint64_t base_seed, std::size_t pool_size, std::vector<int> classes)
    : base_seed_(base_seed), pool_size_(pool_size), classes_(std::move(classes)) {
  if (classes_.empty()) throw InvalidArgument("dataset: no classes");
  for (int c : classes_) {
    if (c < 0 || c >= kNumShapeClasses) throw InvalidArgument("dataset: invalid class " + std::to_string(c));
  }
}

Tensor ShapesDataset::sample(int cls, std::uint64_t seed) const {
  if (cls < 0 || cls >= kNumShapeClasses) throw InvalidArgument("dataset: invalid class " + std::to_string(cls));
  RngStream rng(seed, RngStream::stream_id("shapes", static_cast<std::uint64_t>(cls)));
  const auto h = static_cast<int>(shape_.height);
  const auto w = static_cast<int>(shape_.width);
  Tensor img = Tensor::full(shape_.shape(), kBackground);
  const double fg = rng.uniform(0.6, 1.0);
  const double cy = rng.uniform(5.5, 10.5);
  const double cx = rng.uniform(5.5, 10.5);
  auto inside = [&](double dy, double dx, double py, double px) -> bool {
    switch (static_cast<ShapeClass>(cls)) {
      case ShapeClass::disk: return dy * dy + dx * dx <= py * py;
      case ShapeClass::square: return std::abs(dy) <= py && std::abs(dx) <= py;
      case ShapeClass::cross:
        return (std::abs(dx) <= px && std::abs(dy) <= py) || (std::abs(dy) <= px && std::abs(dx) <= py);
      case ShapeClass::stripes: return false;
    }
    return false;
  };
  if (static_cast<ShapeClass>(cls) == ShapeClass::stripes) {
    const int period = rng.uniform_int(4, 6);
    const double phase = rng.uniform(0.0, period);
    const bool vertical = rng.uniform(0.0, 1.0) < 0.5;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double u = (vertical ? x : y) + phase;
        if (std::fmod(u, period) < period / 2.0) img[static_cast<std::size_t>(y * w + x)] = fg;
      }
    }
    return img;
  }
  double size = 0.0, thick = 0.0;
  switch (static_cast<ShapeClass>(cls)) {
    case ShapeClass::disk: size = rng.uniform(2.5, 5.0); break;
    case ShapeClass::square: size = rng.uniform(2.0, 4.5); break;
    case ShapeClass::cross:
      size = rng.uniform(3.0, 6.0);
      thick = rng.uniform(0.8, 1.6);
      break;
    case ShapeClass::stripes: break;
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (inside(y + 0.5 - cy, x + 0.5 - cx, size, thick)) img[static_cast<std::size_t>(y * w + x)] = fg;
    }
  }
  return img;
}

std::uint64_t ShapesDataset::resolve_seed(std::uint64_t index) const {
  return base_seed_ * 0x9e3779b97f4a7c15ULL + (pool_size_ > 0 ? index % pool_size_ : index);
}

ShapesDataset::Batch ShapesDataset::batch(RngStream& rng, std::size_t size) const {
  Batch b{Matrix(static_cast<Eigen::Index>(shape_.size()), static_cast<Eigen::Index>(size)), {}};
  b.conds.reserve(size);
  for (std::size_t j = 0; j < size; ++j) {
    const int cls = classes_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(classes_.size()) - 1))];
    const std::uint64_t idx = pool_size_ > 0 ? static_cast<std::uint64_t>(rng.uniform_int(0, static_cast<int>(pool_size_) - 1))
                                             : (static_cast<std::uint64_t>(rng.uniform_int(0, 1 << 30)) << 20) ^
                                                   static_cast<std::uint64_t>(rng.uniform_int(0, 1 << 20));
    b.images.col(static_cast<Eigen::Index>(j)) = sample(cls, resolve_seed(idx)).vec();
    b.conds.push_back(Condition::of(cls));
  }
  return b;
}

Matrix ShapesDataset::class_samples(int cls, std::size_t count, std::uint64_t offset) const {
  Matrix m(static_cast<Eigen::Index>(shape_.size()), static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) m.col(static_cast<Eigen::Index>(i)) = sample(cls, resolve_seed(offset + i)).vec();
  return m;
}

}  // namespace nr
