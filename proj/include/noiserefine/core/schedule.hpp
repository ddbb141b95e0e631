#pragma once

#include "noiserefine/core/tensor.hpp"

#include <span>
#include <vector>

namespace nr {

/// Coefficients of one deterministic DDIM substep t -> t_prev:
/// x_{t_prev} = a * x_t + b * eps, with gamma = -b.
struct StepCoefficients {
  double a = 1.0;
  double b = 0.0;
  double gamma = 0.0;
};

/// Cumulative signal factors alpha[0..T] with alpha[0] = 1.
class NoiseSchedule {
 public:
  /// Linear beta from beta_start to beta_end over T steps.
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  /// Manual construction; alpha must start at 1 and be non-increasing in (0, 1].
  static NoiseSchedule from_alphas(std::vector<double> alpha);

  int steps() const { return static_cast<int>(alpha_.size()) - 1; }
  double alpha(int t) const;
  std::span<const double> alphas() const { return alpha_; }

  StepCoefficients coefficients(int t, int t_prev) const;
  /// Ancestral noise scale for the pair; eta = 1 gives DDPM, eta = 0 gives DDIM.
  double sigma(int t, int t_prev, double eta) const;

  /// Evenly spaced, strictly decreasing timesteps [T, ..., t_1] for `n` steps.
  /// The final substep of a rollout always lands on t = 0.
  std::vector<int> subsequence(int n) const;

 private:
  explicit NoiseSchedule(std::vector<double> alpha) : alpha_(std::move(alpha)) {}
  void check_timestep(int t, const char* what) const;

  std::vector<double> alpha_;
};

/// Default toy schedule: T = 100, beta linear in [1e-3, 0.1].
NoiseSchedule default_schedule();

/// sqrt(alpha[t]) * x0 + sqrt(1 - alpha[t]) * eps.
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);
Matrix forward_diffuse(const Matrix& x0, int t, const Matrix& eps, const NoiseSchedule& schedule);

}  // namespace nr
