#pragma once

#include "noiserefine/core/schedule.hpp"
#include "noiserefine/nets/networks.hpp"
#include "noiserefine/sampler/sampler.hpp"
#include "noiserefine/training/pairs.hpp"

#include <span>
#include <vector>

namespace nr {

/// Noise-space versus image-space distances over a set of guided pairs.
///
/// For each pair: d_noise = |xT - invert(x0_guide)|, d_image = |denoise(xT) - x0_guide|.
/// Per-step Lipschitz estimates compare the two deterministic trajectories
/// started from xT and from the inverted noise.
struct Prop1Report {
  std::vector<double> noise_distance;
  std::vector<double> image_distance;
  std::vector<double> ratio;        // d_noise / d_image, 0 when d_noise is at round-off
  double kappa = 0.0;               // max ratio
  double pearson = 0.0;             // correlation of the two distances
  std::vector<int> t;               // rollout timesteps, descending
  std::vector<double> lipschitz;    // max over pairs of |eps(x) - eps(y)| / |x - y| at each t
  std::vector<double> bound_ratio;  // d_noise / (prod(1 + gamma L) sqrt(alpha_T) d_image)
  double bound_holds_fraction = 0.0;
};

Prop1Report verify_prop1(const NoisePredictor& net, std::span<const NoisePair> pairs, const NoiseSchedule& schedule,
                         const InversionConfig& inversion);

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);

struct Prop2Batch {
  Matrix xT;
  std::vector<Condition> conds;
  Matrix target;
};

struct Prop2Config {
  int steps = 3;
  double loss_scale = 1.0;
  /// Estimate the per-step Jacobian constants from this many leading columns; 0 skips.
  int eta_columns = 1;
};

struct Prop2Row {
  double loss = 0.0;
  double cosine = 0.0;
  double k_hat = 0.0;        // <g_full, g_msd> / |g_msd|^2
  double k_predicted = 0.0;  // 1 - sqrt(alpha_T) sum gamma eta / sqrt(alpha_prev)
  double full_norm = 0.0;
  double msd_norm = 0.0;
  std::vector<double> eta;   // trace(d eps_t / d g) / D per step
};

struct Prop2Report {
  std::vector<Prop2Row> rows;
  double mean_cosine = 0.0;
  double mean_k_hat = 0.0;
};

/// Refiner gradients of the image-space loss with and without detached
/// denoiser outputs, on identical batches.
Prop2Report verify_prop2(const RefinerNet& refiner, const NoisePredictor& net, std::span<const Prop2Batch> batches,
                         const NoiseSchedule& schedule, const Prop2Config& cfg);

/// Composite Jacobian constants of the rollout started at `g`, one per step.
std::vector<double> rollout_eta(const NoisePredictor& net, const Vector& g, Condition c, const NoiseSchedule& schedule,
                                int steps);

/// 1 - sqrt(alpha_T) sum_i gamma_i eta_i / sqrt(alpha_prev_i) over the rollout pairs.
double predicted_k(const NoiseSchedule& schedule, int steps, std::span<const double> eta);

}  // namespace nr
