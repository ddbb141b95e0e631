#include "noiserefine/core/schedule.hpp"

#include "noiserefine/core/errors.hpp"

#include <cmath>
#include <string>

namespace nr {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw InvalidArgument("build_schedule: T must be >= 2, got " + std::to_string(steps));
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw InvalidArgument("build_schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> alpha(static_cast<std::size_t>(steps) + 1);
  alpha[0] = 1.0;
  for (int i = 1; i <= steps; ++i) {
    const double beta = beta_start + (beta_end - beta_start) * (i - 1) / (steps - 1);
    alpha[i] = alpha[i - 1] * (1.0 - beta);
  }
  return NoiseSchedule(std::move(alpha));
}

NoiseSchedule NoiseSchedule::from_alphas(std::vector<double> alpha) {
  if (alpha.size() < 2) throw InvalidArgument("schedule needs at least two alphas");
  if (alpha[0] != 1.0) throw InvalidArgument("schedule alpha[0] must be 1");
  for (std::size_t t = 1; t < alpha.size(); ++t) {
    if (!(alpha[t] > 0.0 && alpha[t] <= alpha[t - 1])) {
      throw InvalidArgument("schedule alphas must be non-increasing in (0, 1]");
    }
  }
  return NoiseSchedule(std::move(alpha));
}

void NoiseSchedule::check_timestep(int t, const char* what) const {
  if (t < 0 || t > steps()) {
    throw InvalidArgument(std::string(what) + ": timestep " + std::to_string(t) + " outside [0, " +
                          std::to_string(steps()) + "]");
  }
}

double NoiseSchedule::alpha(int t) const {
  check_timestep(t, "alpha");
  return alpha_[static_cast<std::size_t>(t)];
}

StepCoefficients NoiseSchedule::coefficients(int t, int t_prev) const {
  check_timestep(t, "coefficients");
  check_timestep(t_prev, "coefficients");
  if (t_prev >= t) {
    throw InvalidArgument("non-monotone timesteps: t_prev " + std::to_string(t_prev) + " >= t " +
                          std::to_string(t));
  }
  const double at = alpha(t);
  const double ap = alpha(t_prev);
  if (at == ap) return {};
  StepCoefficients c;
  c.a = std::sqrt(ap / at);
  c.b = std::sqrt(1.0 - ap) - c.a * std::sqrt(1.0 - at);
  c.gamma = -c.b;
  return c;
}

double NoiseSchedule::sigma(int t, int t_prev, double eta) const {
  check_timestep(t, "sigma");
  check_timestep(t_prev, "sigma");
  const double at = alpha(t);
  const double ap = alpha(t_prev);
  if (at == ap || eta == 0.0) return 0.0;
  return eta * std::sqrt((1.0 - ap) / (1.0 - at)) * std::sqrt(1.0 - at / ap);
}

std::vector<int> NoiseSchedule::subsequence(int n) const {
  if (n < 1 || n > steps()) {
    throw InvalidArgument("step count " + std::to_string(n) + " outside [1, " + std::to_string(steps()) + "]");
  }
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(n));
  for (int i = n; i >= 1; --i) {
    ts.push_back(static_cast<int>(std::lround(static_cast<double>(i) * steps() / n)));
  }
  return ts;
}

NoiseSchedule default_schedule() { return NoiseSchedule::linear(100, 1e-3, 0.1); }

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "forward_diffuse");
  if (t < 1 || t > schedule.steps()) throw InvalidArgument("forward_diffuse: t outside [1, T]");
  const double a = schedule.alpha(t);
  Tensor out(x0.shape());
  out.vec() = std::sqrt(a) * x0.vec() + std::sqrt(1.0 - a) * eps.vec();
  return out;
}

Matrix forward_diffuse(const Matrix& x0, int t, const Matrix& eps, const NoiseSchedule& schedule) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) throw ShapeMismatch("forward_diffuse: batch shapes differ");
  if (t < 1 || t > schedule.steps()) throw InvalidArgument("forward_diffuse: t outside [1, T]");
  const double a = schedule.alpha(t);
  return std::sqrt(a) * x0 + std::sqrt(1.0 - a) * eps;
}

}  // namespace nr
