#include "noiserefine/core/errors.hpp"
#include "noiserefine/core/fft.hpp"
#include "noiserefine/core/io.hpp"
#include "noiserefine/core/rng.hpp"
#include "noiserefine/core/schedule.hpp"
#include "noiserefine/core/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace nr {
namespace {

TEST(Tensor, DataLengthMatchesShape) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeMismatch);
}

TEST(Tensor, ColumnRoundTrip) {
  RngStream rng(1, 2);
  const Matrix m = rng.normal_matrix(12, 3);
  const auto items = unstack_columns(m, {3, 4});
  ASSERT_EQ(items.size(), 3u);
  EXPECT_EQ(stack_columns(items), m);
  EXPECT_EQ(Tensor::from_column(m, 1, {3, 4}).vec(), m.col(1));
}

TEST(Tensor, ArithmeticChecksShapes) {
  const Tensor a = Tensor::full({2, 2}, 1.5);
  const Tensor b = Tensor::full({2, 2}, 0.5);
  EXPECT_EQ((a - b), Tensor::full({2, 2}, 1.0));
  EXPECT_EQ((2.0 * b), Tensor::full({2, 2}, 1.0));
  EXPECT_THROW(a + Tensor::full({4}, 1.0), ShapeMismatch);
}

TEST(Tensor, FiniteGuard) {
  Tensor t = Tensor::zeros({3});
  EXPECT_NO_THROW(require_finite(t, "t"));
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(require_finite(t, "t"), NumericError);
}

TEST(Schedule, TwoStepProduct) {
  const auto s = NoiseSchedule::linear(2, 0.5, 0.5);
  ASSERT_EQ(s.steps(), 2);
  EXPECT_DOUBLE_EQ(s.alpha(0), 1.0);
  EXPECT_DOUBLE_EQ(s.alpha(1), 0.5);
  EXPECT_DOUBLE_EQ(s.alpha(2), 0.25);
}

TEST(Schedule, RejectsInvalidRanges) {
  EXPECT_THROW(NoiseSchedule::linear(1, 0.1, 0.2), InvalidArgument);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.0, 0.2), InvalidArgument);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.3, 0.2), InvalidArgument);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.1, 1.0), InvalidArgument);
  EXPECT_THROW(NoiseSchedule::from_alphas({0.9, 0.5}), InvalidArgument);
  EXPECT_THROW(NoiseSchedule::from_alphas({1.0, 0.5, 0.6}), InvalidArgument);
}

// Product computed in long double, independent of the library's loop.
long double oracle_alpha(int T, long double bs, long double be, int t) {
  long double a = 1.0L;
  for (int i = 1; i <= t; ++i) a *= 1.0L - (bs + (be - bs) * (i - 1) / (T - 1));
  return a;
}

TEST(Schedule, StandardBetaRangeAtHundredSteps) {
  const auto s = NoiseSchedule::linear(100, 1e-4, 0.02);
  const double frozen = 0.3635632480554922;
  EXPECT_NEAR(static_cast<double>(oracle_alpha(100, 1e-4L, 0.02L, 100)), frozen, 1e-14);
  EXPECT_NEAR(s.alpha(100), frozen, 1e-13);
}

TEST(Schedule, DefaultEndsNearZero) {
  const auto s = default_schedule();
  EXPECT_EQ(s.steps(), 100);
  const double frozen = 0.005363033969016423;
  EXPECT_NEAR(static_cast<double>(oracle_alpha(100, 1e-3L, 0.1L, 100)), frozen, 1e-15);
  EXPECT_NEAR(s.alpha(100), frozen, 1e-14);
  EXPECT_LT(s.alpha(100), 0.01);
  for (int t = 1; t <= 100; ++t) {
    EXPECT_LT(s.alpha(t), s.alpha(t - 1));
    EXPECT_GT(s.alpha(t), 0.0);
  }
}

TEST(Schedule, EqualAlphasGiveIdentityStep) {
  const auto s = NoiseSchedule::from_alphas({1.0, 0.6, 0.6, 0.2});
  const auto c = s.coefficients(2, 1);
  EXPECT_EQ(c.a, 1.0);
  EXPECT_EQ(c.b, 0.0);
  EXPECT_EQ(c.gamma, 0.0);
}

TEST(Schedule, GammaIdentityAndSign) {
  const auto s = default_schedule();
  for (int t = 1; t <= s.steps(); ++t) {
    for (int tp : {0, t / 2, t - 1}) {
      if (tp >= t) continue;
      const auto c = s.coefficients(t, tp);
      EXPECT_NEAR(c.a * std::sqrt(1.0 - s.alpha(t)), std::sqrt(1.0 - s.alpha(tp)) - c.b, 1e-14);
      EXPECT_EQ(c.gamma, -c.b);
      EXPECT_GT(c.gamma, 0.0);
    }
  }
  EXPECT_THROW(s.coefficients(3, 3), InvalidArgument);
  EXPECT_THROW(s.coefficients(3, 5), InvalidArgument);
}

TEST(Schedule, MonotoneInBeta) {
  RngStream rng(3, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const double bs = rng.uniform(1e-4, 0.01);
    const double be1 = rng.uniform(bs, 0.2);
    const double be2 = rng.uniform(be1, 0.3);
    const auto s1 = NoiseSchedule::linear(50, bs, be1);
    const auto s2 = NoiseSchedule::linear(50, bs, be2);
    for (int t = 0; t <= 50; ++t) EXPECT_LE(s2.alpha(t), s1.alpha(t));
  }
}

TEST(Schedule, Subsequence) {
  const auto s = default_schedule();
  EXPECT_EQ(s.subsequence(10), (std::vector<int>{100, 90, 80, 70, 60, 50, 40, 30, 20, 10}));
  EXPECT_EQ(s.subsequence(1), (std::vector<int>{100}));
  EXPECT_EQ(s.subsequence(100).back(), 1);
  EXPECT_THROW(s.subsequence(0), InvalidArgument);
  EXPECT_THROW(s.subsequence(101), InvalidArgument);
}

TEST(ForwardDiffuse, ZeroNoiseAndZeroSignal) {
  const auto s = NoiseSchedule::linear(2, 0.5, 0.5);
  RngStream rng(4, 0);
  const Tensor x0 = rng.normal_tensor({1, 4, 4});
  const Tensor eps = rng.normal_tensor({1, 4, 4});
  const Tensor y = forward_diffuse(x0, 2, Tensor::zeros(x0.shape()), s);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.5 * x0[i]);
  const Tensor z = forward_diffuse(Tensor::zeros(x0.shape()), 1, eps, s);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_DOUBLE_EQ(z[i], std::sqrt(0.5) * eps[i]);
  EXPECT_THROW(forward_diffuse(x0, 2, Tensor::zeros({16}), s), ShapeMismatch);
  EXPECT_THROW(forward_diffuse(x0, 0, eps, s), InvalidArgument);
}

TEST(ForwardDiffuse, FinalStepVarianceMatchesNoise) {
  const auto s = default_schedule();
  RngStream rng(5, 0);
  const Matrix x0 = rng.normal_matrix(1, 10000);
  const Matrix eps = rng.normal_matrix(1, 10000);
  const Matrix y = forward_diffuse(x0, 100, eps, s);
  auto var = [](const Matrix& m) { return (m.array() - m.mean()).square().sum() / static_cast<double>(m.size() - 1); };
  // Var(y) = alpha + (1 - alpha) Var(eps) for unit-variance inputs: 1 up to sampling noise.
  EXPECT_NEAR(var(y), var(eps), 0.03);
}

TEST(Fft, ConstantImageIsDcOnly) {
  const Tensor x = Tensor::full({8, 16}, 0.75);
  const auto s = fft2(x);
  EXPECT_NEAR(std::sqrt(s.magnitude_squared(0, 0, 0)), 8 * 16 * 0.75, 1e-12);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t xx = 0; xx < 16; ++xx)
      if (y != 0 || xx != 0) EXPECT_NEAR(s.magnitude_squared(0, y, xx), 0.0, 1e-20);
}

TEST(Fft, ImpulseIsFlat) {
  Tensor x = Tensor::zeros({16, 16});
  x[5 * 16 + 9] = 1.0;
  const auto s = fft2(x);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t xx = 0; xx < 16; ++xx) EXPECT_NEAR(s.magnitude_squared(0, y, xx), 1.0, 1e-12);
}

TEST(Fft, RoundTripAndParseval) {
  RngStream rng(6, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = rng.normal_tensor({2, 16, 16});
    const auto s = fft2(x);
    const Tensor back = ifft2(s);
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(back[i], x[i], 1e-9);
    EXPECT_NEAR(s.energy(), x.squared_norm(), 1e-9 * x.squared_norm());
  }
}

TEST(Fft, RejectsNonPowerOfTwo) {
  EXPECT_THROW(fft2(Tensor::zeros({12, 16})), InvalidArgument);
  EXPECT_THROW(fft2(Tensor::zeros({16})), ShapeMismatch);
}

TEST(Fft, RadialIndexNormalization) {
  EXPECT_DOUBLE_EQ(radial_index(0, 0, 16, 16), 0.0);
  EXPECT_DOUBLE_EQ(radial_index(8, 8, 16, 16), 1.0);
  EXPECT_LT(radial_index(7, 7, 16, 16), 1.0);
  EXPECT_DOUBLE_EQ(radial_index(1, 0, 16, 16), radial_index(15, 0, 16, 16));
}

TEST(BandMask, LowBandCountMatchesScalarLoop) {
  std::size_t oracle = 0;
  for (int ky = -8; ky < 8; ++ky)
    for (int kx = -8; kx < 8; ++kx)
      if (std::sqrt(static_cast<double>(ky * ky + kx * kx)) / std::sqrt(128.0) < 0.25) ++oracle;
  EXPECT_EQ(oracle, 21u);
  EXPECT_EQ(band_mask(16, 16, 0.0, 0.25).count(), oracle);
}

TEST(BandMask, FullRangeAndInvalidIntervals) {
  EXPECT_EQ(band_mask(16, 16, 0.0, 1.0).count(), 256u);
  EXPECT_THROW(band_mask(16, 16, 0.3, 0.3), InvalidArgument);
  EXPECT_THROW(band_mask(16, 16, -0.1, 0.3), InvalidArgument);
  EXPECT_THROW(band_mask(16, 16, 0.2, 1.1), InvalidArgument);
}

TEST(BandMask, AdjacentBandsPartition) {
  const double edges[] = {0.0, 0.1, 0.25, 0.5, 0.75, 1.0};
  std::vector<int> hits(256, 0);
  for (int i = 0; i + 1 < 6; ++i) {
    const auto m = band_mask(16, 16, edges[i], edges[i + 1]);
    for (std::size_t k = 0; k < 256; ++k) hits[k] += m.selected[k] ? 1 : 0;
  }
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(Rng, Reproducible) {
  RngStream a(42, RngStream::stream_id("x", 3));
  RngStream b(42, RngStream::stream_id("x", 3));
  EXPECT_EQ(a.normal_tensor({4, 4}), b.normal_tensor({4, 4}));
  RngStream c(42, RngStream::stream_id("x", 4));
  RngStream d(42, RngStream::stream_id("x", 3));
  EXPECT_NE(c.normal_tensor({4, 4}), d.normal_tensor({4, 4}));
  EXPECT_NE(RngStream::stream_id("pairs", 0), RngStream::stream_id("pairs", 1));
  EXPECT_NE(RngStream::stream_id("pairs", 0), RngStream::stream_id("shapes", 0));
}

TEST(Rng, UniformBounds) {
  RngStream r(1, 1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform(2.0, 3.0);
    EXPECT_GE(u, 2.0);
    EXPECT_LT(u, 3.0);
    const int k = r.uniform_int(4, 6);
    EXPECT_GE(k, 4);
    EXPECT_LE(k, 6);
  }
  EXPECT_EQ(r.uniform(0.0, 0.0), 0.0);
}

TEST(Io, TensorRoundTripIsBitExact) {
  RngStream rng(7, 0);
  const Tensor t = rng.normal_tensor({2, 3, 5});
  std::stringstream ss;
  io::write_tensor(ss, t);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 8), "NFTENSOR");
  EXPECT_EQ(bytes.size(), 8u + 4u + 3u * 4u + 30u * 8u);
  EXPECT_EQ(io::read_tensor(ss), t);
}

TEST(Io, RejectsBadMagic) {
  std::stringstream ss("NOTATENSxxxxxxxx");
  EXPECT_THROW(io::read_tensor(ss), IoError);
}

TEST(Io, PgmHeaderAndRange) {
  const auto dir = std::filesystem::temp_directory_path() / "nr_test_io";
  std::filesystem::create_directories(dir);
  Tensor img({2, 3}, {-1.0, 0.0, 1.0, 1.0, 0.0, -1.0});
  io::save_pgm(dir / "a.pgm", img);
  std::ifstream is(dir / "a.pgm", std::ios::binary);
  const std::string content((std::istreambuf_iterator<char>(is)), {});
  const std::string header = "P5\n3 2\n255\n";
  ASSERT_EQ(content.substr(0, header.size()), header);
  const std::string px = content.substr(header.size());
  ASSERT_EQ(px.size(), 6u);
  EXPECT_EQ(static_cast<unsigned char>(px[0]), 0);
  EXPECT_EQ(static_cast<unsigned char>(px[2]), 255);
  std::filesystem::remove_all(dir);
}

TEST(Io, TileGrid) {
  std::vector<Tensor> imgs(3, Tensor::full({1, 2, 2}, 1.0));
  const Tensor g = io::tile_grid(imgs, 2, -1.0);
  EXPECT_EQ(g.shape(), (Shape{5, 5}));
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[2], -1.0);
}

}  // namespace
}  // namespace nr
