#include "noiserefine/analysis/frequency.hpp"

#include "noiserefine/core/errors.hpp"

#include <cmath>

namespace nr {

Histogram diff_histogram(const Matrix& a, const Matrix& b, int bins, double range) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch("diff_histogram: shapes differ");
  if (bins < 1) throw InvalidArgument("diff_histogram: bins must be positive");
  if (!(range > 0.0)) throw InvalidArgument("diff_histogram: range must be positive");
  if (a.size() == 0) throw InvalidArgument("diff_histogram: empty input");
  require_finite(a, "diff_histogram");
  require_finite(b, "diff_histogram");

  Histogram h;
  h.samples = static_cast<std::size_t>(a.size());
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  const double width = range / bins;
  for (int i = 0; i <= bins; ++i) h.edges.push_back(i * width);
  double total = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double d = std::abs(a(i, j) - b(i, j));
      total += d;
      const auto bin = std::min<std::size_t>(static_cast<std::size_t>(d / width), static_cast<std::size_t>(bins - 1));
      ++h.counts[bin];
    }
  }
  h.mean_abs = total / static_cast<double>(h.samples);
  for (std::size_t c : h.counts) h.density.push_back(static_cast<double>(c) / (static_cast<double>(h.samples) * width));
  return h;
}

Histogram diff_histogram(const Tensor& a, const Tensor& b, int bins, double range) {
  require_same_shape(a, b, "diff_histogram");
  return diff_histogram(Matrix(a.vec()), Matrix(b.vec()), bins, range);
}

std::vector<double> uniform_band_edges(int count) {
  if (count < 1) throw InvalidArgument("uniform_band_edges: count must be positive");
  std::vector<double> edges;
  for (int i = 0; i <= count; ++i) edges.push_back(static_cast<double>(i) / count);
  edges.back() = 1.0;
  return edges;
}

namespace {

std::vector<BandMask> band_masks(const ImageShape& shape, const std::vector<double>& edges) {
  if (edges.size() < 2 || edges.front() != 0.0 || edges.back() != 1.0) {
    throw InvalidArgument("band_energy: edges must start at 0 and end at 1");
  }
  std::vector<BandMask> masks;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    if (!(edges[i] < edges[i + 1])) throw InvalidArgument("band_energy: edges must increase strictly");
    masks.push_back(band_mask(shape.height, shape.width, edges[i], edges[i + 1]));
    if (masks.back().count() == 0) {
      throw InvalidArgument("band_energy: band [" + std::to_string(edges[i]) + ", " + std::to_string(edges[i + 1]) +
                            ") contains no frequency bins");
    }
  }
  return masks;
}

// Energy per band of one image, normalized like FrequencySpectrum::energy.
std::vector<double> band_energies(const Tensor& img, const std::vector<BandMask>& masks) {
  const FrequencySpectrum s = fft2(img);
  const double norm = 1.0 / static_cast<double>(s.height * s.width);
  std::vector<double> e(masks.size(), 0.0);
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x) {
        const double m = s.magnitude_squared(c, y, x) * norm;
        for (std::size_t b = 0; b < masks.size(); ++b) {
          if (masks[b](y, x)) e[b] += m;
        }
      }
    }
  }
  return e;
}

}  // namespace

BandReport band_energy(const Matrix& diffs, const ImageShape& shape, const std::vector<double>& edges,
                       const BandEnergyConfig& cfg) {
  if (diffs.rows() != static_cast<Eigen::Index>(shape.size())) throw ShapeMismatch("band_energy: rows != image size");
  if (diffs.cols() < 1) throw InvalidArgument("band_energy: no inputs");
  if (cfg.baseline_draws < 2) throw InvalidArgument("band_energy: need at least two baseline draws");
  require_finite(diffs, "band_energy");
  const std::vector<BandMask> masks = band_masks(shape, edges);
  const std::size_t nb = masks.size();

  BandReport r;
  r.edges = edges;
  r.inputs = static_cast<std::size_t>(diffs.cols());
  for (const BandMask& m : masks) r.bin_count.push_back(m.count() * shape.channels);
  r.energy.assign(nb, 0.0);
  for (Eigen::Index j = 0; j < diffs.cols(); ++j) {
    const Tensor img = Tensor::from_column(diffs, j, shape.shape());
    r.total_energy += img.squared_norm();
    const std::vector<double> e = band_energies(img, masks);
    for (std::size_t b = 0; b < nb; ++b) r.energy[b] += e[b];
  }
  double sum = 0.0;
  for (double e : r.energy) sum += e;
  r.partition_error = std::abs(sum - r.total_energy) / std::max(r.total_energy, 1.0);
  for (double e : r.energy) r.fraction.push_back(r.total_energy > 0.0 ? e / r.total_energy : 0.0);

  RngStream rng(cfg.seed, RngStream::stream_id("bands.baseline"));
  std::vector<double> mean(nb, 0.0), sq(nb, 0.0);
  for (int d = 0; d < cfg.baseline_draws; ++d) {
    const Tensor noise = rng.normal_tensor(shape.shape());
    const std::vector<double> e = band_energies(noise, masks);
    double total = 0.0;
    for (double v : e) total += v;
    for (std::size_t b = 0; b < nb; ++b) {
      const double f = e[b] / total;
      mean[b] += f;
      sq[b] += f * f;
    }
  }
  const double n = cfg.baseline_draws;
  for (std::size_t b = 0; b < nb; ++b) {
    const double m = mean[b] / n;
    r.baseline_fraction.push_back(m);
    r.baseline_std.push_back(std::sqrt(std::max(0.0, (sq[b] - n * m * m) / (n - 1.0))));
  }
  return r;
}

BandReport band_energy(const Tensor& diff, const std::vector<double>& edges, const BandEnergyConfig& cfg) {
  ImageShape shape;
  if (diff.rank() == 2) {
    shape = {1, diff.dim(0), diff.dim(1)};
  } else if (diff.rank() == 3) {
    shape = {diff.dim(0), diff.dim(1), diff.dim(2)};
  } else {
    throw ShapeMismatch("band_energy: expected [H, W] or [C, H, W], got " + shape_string(diff.shape()));
  }
  return band_energy(Matrix(diff.vec()), shape, edges, cfg);
}

Tensor band_swap_probe(const Tensor& xT, const Tensor& refined, Band band, BandSwapMode mode, const Tensor* reinit) {
  require_same_shape(xT, refined, "band_swap_probe");
  if (!(band.lo >= 0.0 && band.lo <= band.hi && band.hi <= 1.0)) {
    throw InvalidArgument("band_swap_probe: need 0 <= lo <= hi <= 1, got [" + std::to_string(band.lo) + ", " +
                          std::to_string(band.hi) + ")");
  }
  if (mode == BandSwapMode::keep_and_reinit) {
    if (reinit == nullptr) throw InvalidArgument("band_swap_probe: keep_and_reinit needs a reinit noise");
    require_same_shape(xT, *reinit, "band_swap_probe reinit");
  }

  FrequencySpectrum base = fft2(xT);
  BandMask mask{base.height, base.width, std::vector<bool>(base.height * base.width, false)};
  if (band.lo < band.hi) mask = band_mask(base.height, base.width, band.lo, band.hi);
  const std::size_t selected = mask.count();

  // Trivial selections skip the transform round trip so they are exact.
  if (selected == mask.selected.size()) return refined;
  if (selected == 0) {
    switch (mode) {
      case BandSwapMode::replace_band: return xT;
      case BandSwapMode::keep_only: return Tensor::zeros(xT.shape());
      case BandSwapMode::keep_and_reinit: return *reinit;
    }
  }

  const FrequencySpectrum ref = fft2(refined);
  FrequencySpectrum out = base;
  if (mode == BandSwapMode::keep_and_reinit) out = fft2(*reinit);
  const std::size_t h = base.height, w = base.width, plane = h * w;
  for (std::size_t c = 0; c < base.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = c * plane + i;
      if (mask.selected[i]) {
        out.real[k] = ref.real[k];
        out.imag[k] = ref.imag[k];
      } else if (mode == BandSwapMode::keep_only) {
        out.real[k] = 0.0;
        out.imag[k] = 0.0;
      }
    }
  }

  FrequencySpectrum sym = out;
  for (std::size_t c = 0; c < base.channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t k = c * plane + y * w + x;
        const std::size_t m = c * plane + ((h - y) % h) * w + (w - x) % w;
        sym.real[k] = 0.5 * (out.real[k] + out.real[m]);
        sym.imag[k] = 0.5 * (out.imag[k] - out.imag[m]);
      }
    }
  }
  return ifft2(sym).reshaped(xT.shape());
}

}  // namespace nr
