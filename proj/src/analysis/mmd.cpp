#include "noiserefine/analysis/mmd.hpp"

#include "noiserefine/core/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nr {

namespace {

Matrix squared_distances(const Matrix& a, const Matrix& b) {
  const Vector na = a.colwise().squaredNorm().transpose();
  const Vector nb = b.colwise().squaredNorm().transpose();
  Matrix d = -2.0 * a.transpose() * b;
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

void require_bandwidth(double bw) {
  if (!(bw > 0.0) || !std::isfinite(bw)) throw InvalidArgument("mmd: bandwidth must be positive");
}

// Unbiased statistic from a pooled kernel matrix with the first m columns in set A.
double unbiased_from_pooled(const Matrix& k, const std::vector<Eigen::Index>& idx, Eigen::Index m) {
  const auto n = static_cast<Eigen::Index>(idx.size()) - m;
  double kaa = 0.0, kbb = 0.0, kab = 0.0;
  for (Eigen::Index i = 0; i < m + n; ++i) {
    for (Eigen::Index j = 0; j < m + n; ++j) {
      if (i == j) continue;
      const double v = k(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      if (i < m && j < m) {
        kaa += v;
      } else if (i >= m && j >= m) {
        kbb += v;
      } else if (i < m) {
        kab += v;
      }
    }
  }
  const double dm = static_cast<double>(m), dn = static_cast<double>(n);
  return kaa / (dm * (dm - 1.0)) + kbb / (dn * (dn - 1.0)) - 2.0 * kab / (dm * dn);
}

}  // namespace

Matrix rbf_kernel(const Matrix& a, const Matrix& b, double bandwidth) {
  require_bandwidth(bandwidth);
  if (a.rows() != b.rows()) throw ShapeMismatch("rbf_kernel: dimension mismatch");
  return (-squared_distances(a, b) / (2.0 * bandwidth * bandwidth)).array().exp().matrix();
}

double median_heuristic(const Matrix& samples) {
  if (samples.cols() < 2) throw InvalidArgument("median_heuristic: need at least two samples");
  const Matrix d = squared_distances(samples, samples);
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(samples.cols() * (samples.cols() - 1) / 2));
  for (Eigen::Index j = 0; j < d.cols(); ++j)
    for (Eigen::Index i = 0; i < j; ++i) v.push_back(std::sqrt(d(i, j)));
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

double mmd2_biased(const Matrix& a, const Matrix& b, double bandwidth) {
  if (a.cols() < 1 || b.cols() < 1) throw InvalidArgument("mmd: sets must be non-empty");
  return rbf_kernel(a, a, bandwidth).mean() + rbf_kernel(b, b, bandwidth).mean() -
         2.0 * rbf_kernel(a, b, bandwidth).mean();
}

double mmd2_unbiased(const Matrix& a, const Matrix& b, double bandwidth) {
  if (a.cols() < 2 || b.cols() < 2) throw InvalidArgument("mmd: unbiased estimator needs at least two samples per set");
  const double m = static_cast<double>(a.cols()), n = static_cast<double>(b.cols());
  const Matrix kaa = rbf_kernel(a, a, bandwidth);
  const Matrix kbb = rbf_kernel(b, b, bandwidth);
  const double saa = (kaa.sum() - kaa.trace()) / (m * (m - 1.0));
  const double sbb = (kbb.sum() - kbb.trace()) / (n * (n - 1.0));
  return saa + sbb - 2.0 * rbf_kernel(a, b, bandwidth).mean();
}

MmdReport mmd(const Matrix& a, const Matrix& b, std::optional<double> bandwidth) {
  if (a.cols() < 1 || b.cols() < 1) throw InvalidArgument("mmd: sets must be non-empty");
  MmdReport r;
  if (bandwidth) {
    r.bandwidth = *bandwidth;
  } else {
    Matrix pooled(a.rows(), a.cols() + b.cols());
    pooled << a, b;
    r.bandwidth = median_heuristic(pooled);
  }
  r.biased = mmd2_biased(a, b, r.bandwidth);
  r.unbiased = mmd2_unbiased(a, b, r.bandwidth);
  r.reported = std::max(0.0, r.unbiased);
  return r;
}

double mmd_permutation_pvalue(const Matrix& a, const Matrix& b, double bandwidth, int permutations, RngStream& rng) {
  if (permutations < 1) throw InvalidArgument("mmd permutation test: need at least one permutation");
  Matrix pooled(a.rows(), a.cols() + b.cols());
  pooled << a, b;
  const Matrix k = rbf_kernel(pooled, pooled, bandwidth);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(pooled.cols()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  const double observed = unbiased_from_pooled(k, idx, a.cols());
  int exceed = 0;
  for (int p = 0; p < permutations; ++p) {
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)));
      std::swap(idx[i], idx[j]);
    }
    if (unbiased_from_pooled(k, idx, a.cols()) >= observed) ++exceed;
  }
  return static_cast<double>(exceed) / permutations;
}

}  // namespace nr
