#pragma once

#include "noiserefine/core/schedule.hpp"
#include "noiserefine/nets/networks.hpp"

#include <span>
#include <vector>

namespace nr {

/// eps_c + w (eps_c - eps_null) + s (eps_c - eps_degraded_c).
///
/// The degraded predictor is an early-training checkpoint of the denoiser;
/// it stands in for a perturbed-forward score. Terms with a zero scale are
/// not evaluated.
struct GuidanceSpec {
  double cfg_scale = 0.0;
  double degraded_scale = 0.0;
  const NoisePredictor* degraded = nullptr;

  void validate() const;
  /// Predictor evaluations per denoising step.
  int evaluations_per_step() const;
};

/// Guidance with one (w, s) per column. Scales that are zero in every column
/// skip their predictor evaluation, matching GuidanceSpec.
struct ColumnGuidance {
  Vector cfg_scale;
  Vector degraded_scale;
  const NoisePredictor* degraded = nullptr;

  void validate(Eigen::Index cols) const;
};

struct SamplerConfig {
  int steps = 10;         // guidance-free denoising steps N
  int guided_steps = 20;  // guided denoising steps N'
  double eta = 0.0;
};

struct InversionConfig {
  int fixed_point_iters = 5;
  int steps = 10;
};

struct LatentState {
  Matrix x;
  int t = 0;
};

/// Evaluation counter plus optional per-step trajectory.
struct SampleTrace {
  long nfe = 0;
  bool record = false;
  std::vector<LatentState> states;
};

Matrix guided_score(const NoisePredictor& net, const Matrix& x, int t, std::span<const Condition> conds,
                    const GuidanceSpec& g, long* nfe = nullptr);

Matrix guided_score(const NoisePredictor& net, const Matrix& x, int t, std::span<const Condition> conds,
                    const ColumnGuidance& g, long* nfe = nullptr);

/// x_{t_prev} = a x_t + b eps.
LatentState ddim_step(const LatentState& state, const Matrix& eps, const NoiseSchedule& schedule, int t_prev);

/// Ancestral update sqrt(alpha_prev) x0_hat + sqrt(1 - alpha_prev - sigma^2) eps + sigma z.
LatentState ddpm_step(const LatentState& state, const Matrix& eps, const NoiseSchedule& schedule, int t_prev,
                      const Matrix& z, double eta = 1.0);

/// (t, t_prev) pairs of an n-step rollout, ending at t_prev = 0.
std::vector<std::pair<int, int>> rollout_pairs(const NoiseSchedule& schedule, int steps);

/// Deterministic DDIM rollout from x_T. `guidance == nullptr` runs guidance-free.
Matrix denoise(const Matrix& xT, std::span<const Condition> conds, const NoisePredictor& net,
               const NoiseSchedule& schedule, int steps, const GuidanceSpec* guidance = nullptr,
               SampleTrace* trace = nullptr);
Matrix denoise(const Matrix& xT, std::span<const Condition> conds, const NoisePredictor& net,
               const NoiseSchedule& schedule, int steps, const ColumnGuidance& guidance, SampleTrace* trace = nullptr);
Tensor denoise(const Tensor& xT, Condition c, const NoisePredictor& net, const NoiseSchedule& schedule, int steps,
               const GuidanceSpec* guidance = nullptr);

/// Ancestral sampling with fresh z at every step except the last.
Matrix ddpm_sample(const Matrix& xT, std::span<const Condition> conds, const NoisePredictor& net,
                   const NoiseSchedule& schedule, int steps, RngStream& rng, double eta = 1.0);

/// Guidance-free inversion over the same step subsequence as `denoise`.
///
/// Each upward step t_prev -> t starts from the plain DDIM-inversion estimate
/// and applies `fixed_point_iters` iterations of x_t <- (x_prev - b eps(x_t)) / a.
/// Throws NumericError when the iteration residual grows three times in a row.
Matrix invert(const Matrix& x0, std::span<const Condition> conds, const NoisePredictor& net,
              const NoiseSchedule& schedule, const InversionConfig& cfg, SampleTrace* trace = nullptr);
Tensor invert(const Tensor& x0, Condition c, const NoisePredictor& net, const NoiseSchedule& schedule,
              const InversionConfig& cfg);

}  // namespace nr
