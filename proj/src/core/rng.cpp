#include "noiserefine/core/rng.hpp"

namespace nr {

std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(seeded_engine(seed, stream)) {}

std::uint64_t RngStream::stream_id(std::string_view component, std::uint64_t index) {
  std::uint64_t h = fnv1a64(component);
  // splitmix64 finalizer over (name hash, index)
  std::uint64_t z = h + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double RngStream::normal() { return normal_(engine_); }

double RngStream::uniform(double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

int RngStream::uniform_int(int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(engine_);
}

Tensor RngStream::normal_tensor(const Shape& shape) {
  Tensor t(shape);
  fill_normal(t.data());
  return t;
}

Matrix RngStream::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  fill_normal({m.data(), static_cast<std::size_t>(m.size())});
  return m;
}

void RngStream::fill_normal(std::span<double> out) {
  for (double& v : out) v = normal_(engine_);
}

}  // namespace nr
