#pragma once

#include "noiserefine/core/schedule.hpp"
#include "noiserefine/nets/networks.hpp"
#include "noiserefine/training/dataset.hpp"

#include <vector>

namespace nr {

/// Summary of the input Jacobian d eps / d x at one timestep.
struct JacobianReport {
  int t = 0;
  double mean_abs_diag = 0.0;
  double mean_abs_offdiag = 0.0;
  double ratio = 0.0;  // diag / offdiag; +inf when offdiag is 0 and diag is not, 0 when both are
  Matrix jacobian;     // J(i, j) = d eps_i / d x_j
};

/// Full Jacobian by one reverse pass over D copies of x seeded with the identity.
Matrix input_jacobian(const NoisePredictor& net, const Vector& x, int t, Condition c);
/// Central differences, column by column.
Matrix finite_difference_jacobian(const NoisePredictor& net, const Vector& x, int t, Condition c, double h = 1e-5);

JacobianReport summarize_jacobian(int t, Matrix jacobian);
JacobianReport jacobian_probe(const NoisePredictor& net, const Tensor& x, int t, Condition c);

struct GammaPoint {
  int t = 0;
  int t_prev = 0;
  double alpha = 0.0;
  double alpha_prev = 0.0;
  double value = 0.0;  // gamma / sqrt(alpha_prev)
};

/// gamma_t / sqrt(alpha_{t-1}) for every consecutive step, t = 1..T.
std::vector<GammaPoint> gamma_curve(const NoiseSchedule& schedule);
/// The same quantity over the (t, t_prev) pairs of an n-step rollout.
std::vector<GammaPoint> gamma_curve(const NoiseSchedule& schedule, int steps);

/// Great-circle interpolation of the directions with linearly interpolated norm.
/// Throws for zero inputs or (near-)antipodal directions.
Vector slerp(const Vector& x1, const Vector& x2, double a);
Tensor slerp(const Tensor& x1, const Tensor& x2, double a);

/// Refine each column under `c_refine`, then denoise guidance-free under `c_denoise`.
Matrix cross_condition_probe(const RefinerNet& refiner, const NoisePredictor& net, const Matrix& xT,
                             std::span<const Condition> c_refine, std::span<const Condition> c_denoise,
                             const NoiseSchedule& schedule, int steps);
Tensor cross_condition_probe(const RefinerNet& refiner, const NoisePredictor& net, const Tensor& xT,
                             Condition c_refine, Condition c_denoise, const NoiseSchedule& schedule, int steps);

/// Mean image of `count` samples per class, one column per class.
Matrix class_templates(const ShapesDataset& data, std::size_t count, std::uint64_t offset);

/// For each column of `residuals`, the class whose centered template has the
/// highest cosine similarity. Templates are centered by their mean across classes.
std::vector<int> match_templates(const Matrix& residuals, const Matrix& templates);

}  // namespace nr
