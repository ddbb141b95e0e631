#pragma once

#include "noiserefine/core/rng.hpp"
#include "noiserefine/core/tensor.hpp"

#include <optional>

namespace nr {

/// Samples are columns. Gaussian kernel exp(-|x - y|^2 / (2 bandwidth^2)).
Matrix rbf_kernel(const Matrix& a, const Matrix& b, double bandwidth);

/// Median pairwise Euclidean distance among the columns of `samples`.
double median_heuristic(const Matrix& samples);

double mmd2_biased(const Matrix& a, const Matrix& b, double bandwidth);
/// Unbiased U-statistic; both sets need at least two samples.
double mmd2_unbiased(const Matrix& a, const Matrix& b, double bandwidth);

struct MmdReport {
  double unbiased = 0.0;
  double biased = 0.0;
  double reported = 0.0;  // unbiased estimate clamped at 0
  double bandwidth = 0.0;
};

/// With no bandwidth, uses the median heuristic over the pooled samples.
MmdReport mmd(const Matrix& a, const Matrix& b, std::optional<double> bandwidth = std::nullopt);

/// Fraction of label permutations whose unbiased MMD^2 is >= the observed one.
double mmd_permutation_pvalue(const Matrix& a, const Matrix& b, double bandwidth, int permutations, RngStream& rng);

}  // namespace nr
