#pragma once

#include "noiserefine/core/tensor.hpp"

#include <vector>

namespace nr {

/// Per-channel 2D spectrum of a [C, H, W] tensor (unnormalized forward DFT).
struct FrequencySpectrum {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor real;    // [C, H, W]
  Tensor imag;    // [C, H, W]
  Tensor radial;  // [H, W], normalized centered radius in [0, 1]

  double magnitude_squared(std::size_t c, std::size_t y, std::size_t x) const;
  /// Sum of squared magnitudes divided by H*W; equals the spatial energy.
  double energy() const;
};

/// Centered radius of bin (y, x), normalized so the corner bin (-H/2, -W/2) has radius 1.
double radial_index(std::size_t y, std::size_t x, std::size_t height, std::size_t width);
Tensor radial_index_map(std::size_t height, std::size_t width);

/// Accepts [H, W] or [C, H, W]; H and W must be powers of two.
FrequencySpectrum fft2(const Tensor& x);
/// Real part of the 1/(HW)-normalized inverse transform, shape [C, H, W].
Tensor ifft2(const FrequencySpectrum& s);

/// Row-major [H, W] mask of bins whose radius lies in [r_lo, r_hi).
/// r_hi == 1 also admits the corner bin at radius exactly 1.
struct BandMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<bool> selected;

  bool operator()(std::size_t y, std::size_t x) const { return selected[y * width + x]; }
  std::size_t count() const;
};

BandMask band_mask(std::size_t height, std::size_t width, double r_lo, double r_hi);

}  // namespace nr
