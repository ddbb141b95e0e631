#pragma once

#include "noiserefine/core/tensor.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace nr {

/// Stable 64-bit FNV-1a hash, used to derive stream ids from component names.
std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Deterministic random stream identified by (seed, stream id).
///
/// Two streams with the same pair produce identical draws regardless of
/// which thread owns them. Streams are not meant to be shared.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream);

  /// Stream id for the `index`-th consumer of a named component.
  static std::uint64_t stream_id(std::string_view component, std::uint64_t index = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  double normal();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);

  Tensor normal_tensor(const Shape& shape);
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);
  void fill_normal(std::span<double> out);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace nr
