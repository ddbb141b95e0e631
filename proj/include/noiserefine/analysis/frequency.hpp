#pragma once

#include "noiserefine/core/fft.hpp"
#include "noiserefine/core/rng.hpp"
#include "noiserefine/core/tensor.hpp"

#include <vector>

namespace nr {

/// Histogram of |a - b| over [0, range]; values beyond `range` land in the last bin.
struct Histogram {
  std::vector<double> edges;    // bins + 1 entries
  std::vector<std::size_t> counts;
  std::vector<double> density;  // integrates to 1 over [0, range]
  double mean_abs = 0.0;
  std::size_t samples = 0;
};

Histogram diff_histogram(const Tensor& a, const Tensor& b, int bins, double range = 4.0);
/// Pools every entry of two equally shaped batches.
Histogram diff_histogram(const Matrix& a, const Matrix& b, int bins, double range = 4.0);

/// Spectral energy of difference images split into radial bands.
struct BandReport {
  std::vector<double> edges;             // normalized radii, first 0 and last 1
  std::vector<std::size_t> bin_count;    // frequency bins per band
  std::vector<double> energy;            // summed over all inputs
  std::vector<double> fraction;          // energy / total
  std::vector<double> baseline_fraction; // white-noise mean fraction
  std::vector<double> baseline_std;      // white-noise std of the fraction
  double total_energy = 0.0;
  double partition_error = 0.0;          // |sum(energy) - total| / max(total, 1)
  std::size_t inputs = 0;

  std::size_t bands() const { return energy.size(); }
};

struct BandEnergyConfig {
  int baseline_draws = 1000;
  std::uint64_t seed = 0;
};

/// `diffs` holds one flattened [C, H, W] difference per column. Edges must
/// start at 0, end at 1 and increase strictly; a band with no bins is an error.
BandReport band_energy(const Matrix& diffs, const ImageShape& shape, const std::vector<double>& edges,
                       const BandEnergyConfig& cfg = {});
BandReport band_energy(const Tensor& diff, const std::vector<double>& edges, const BandEnergyConfig& cfg = {});

/// `count` equal-width radial bands on [0, 1].
std::vector<double> uniform_band_edges(int count);

enum class BandSwapMode { replace_band, keep_only, keep_and_reinit };

struct Band {
  double lo = 0.0;
  double hi = 1.0;  // lo == hi selects nothing
};

/// Frequency surgery between a Gaussian noise and its refined counterpart.
///
/// replace_band: spectrum of `xT` with the band taken from `refined`.
/// keep_only: band of `refined`, every other bin zero.
/// keep_and_reinit: band of `refined`, every other bin from `reinit`.
/// The spectrum is made Hermitian before the inverse transform.
Tensor band_swap_probe(const Tensor& xT, const Tensor& refined, Band band, BandSwapMode mode,
                       const Tensor* reinit = nullptr);

}  // namespace nr
