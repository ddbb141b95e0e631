#include "noiserefine/core/fft.hpp"

#include "noiserefine/core/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <numbers>

namespace nr {

namespace {

using cplx = std::complex<double>;

// In-place iterative radix-2 transform. `inverse` flips the twiddle sign only.
void fft1d(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cplx w = std::polar(1.0, ang * static_cast<double>(k));
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

void fft2d(std::vector<cplx>& grid, std::size_t h, std::size_t w, bool inverse) {
  std::vector<cplx> line(w);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(grid.begin() + static_cast<std::ptrdiff_t>(y * w), w, line.begin());
    fft1d(line, inverse);
    std::copy(line.begin(), line.end(), grid.begin() + static_cast<std::ptrdiff_t>(y * w));
  }
  line.resize(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) line[y] = grid[y * w + x];
    fft1d(line, inverse);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = line[y];
  }
}

Shape as_chw(const Tensor& x) {
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1)};
  if (x.rank() == 3) return x.shape();
  throw ShapeMismatch("fft2: expected [H, W] or [C, H, W], got " + shape_string(x.shape()));
}

void require_pow2(std::size_t h, std::size_t w) {
  if (!std::has_single_bit(h) || !std::has_single_bit(w)) {
    throw InvalidArgument("fft2: dimensions must be powers of two, got " + std::to_string(h) + "x" +
                          std::to_string(w));
  }
}

double centered(std::size_t i, std::size_t n) {
  return i < n / 2 ? static_cast<double>(i) : static_cast<double>(i) - static_cast<double>(n);
}

}  // namespace

double radial_index(std::size_t y, std::size_t x, std::size_t height, std::size_t width) {
  const double ky = centered(y, height);
  const double kx = centered(x, width);
  const double hy = static_cast<double>(height) / 2.0;
  const double hx = static_cast<double>(width) / 2.0;
  return std::sqrt(ky * ky + kx * kx) / std::sqrt(hy * hy + hx * hx);
}

Tensor radial_index_map(std::size_t height, std::size_t width) {
  Tensor r({height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) r[y * width + x] = radial_index(y, x, height, width);
  return r;
}

double FrequencySpectrum::magnitude_squared(std::size_t c, std::size_t y, std::size_t x) const {
  const std::size_t i = (c * height + y) * width + x;
  return real[i] * real[i] + imag[i] * imag[i];
}

double FrequencySpectrum::energy() const {
  return (real.squared_norm() + imag.squared_norm()) / static_cast<double>(height * width);
}

FrequencySpectrum fft2(const Tensor& x) {
  const Shape chw = as_chw(x);
  const std::size_t c = chw[0], h = chw[1], w = chw[2];
  require_pow2(h, w);
  FrequencySpectrum s{c, h, w, Tensor(chw), Tensor(chw), radial_index_map(h, w)};
  std::vector<cplx> grid(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) grid[i] = x[ch * h * w + i];
    fft2d(grid, h, w, false);
    for (std::size_t i = 0; i < h * w; ++i) {
      s.real[ch * h * w + i] = grid[i].real();
      s.imag[ch * h * w + i] = grid[i].imag();
    }
  }
  return s;
}

Tensor ifft2(const FrequencySpectrum& s) {
  require_pow2(s.height, s.width);
  const std::size_t c = s.channels, h = s.height, w = s.width;
  Tensor out({c, h, w});
  std::vector<cplx> grid(h * w);
  const double scale = 1.0 / static_cast<double>(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) grid[i] = {s.real[ch * h * w + i], s.imag[ch * h * w + i]};
    fft2d(grid, h, w, true);
    for (std::size_t i = 0; i < h * w; ++i) out[ch * h * w + i] = grid[i].real() * scale;
  }
  return out;
}

std::size_t BandMask::count() const { return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true)); }

BandMask band_mask(std::size_t height, std::size_t width, double r_lo, double r_hi) {
  if (!(r_lo >= 0.0 && r_lo < r_hi && r_hi <= 1.0)) {
    throw InvalidArgument("band_mask: need 0 <= r_lo < r_hi <= 1, got [" + std::to_string(r_lo) + ", " +
                          std::to_string(r_hi) + ")");
  }
  BandMask m{height, width, std::vector<bool>(height * width)};
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double r = radial_index(y, x, height, width);
      m.selected[y * width + x] = r >= r_lo && (r < r_hi || (r_hi == 1.0 && r <= 1.0));
    }
  }
  return m;
}

}  // namespace nr
