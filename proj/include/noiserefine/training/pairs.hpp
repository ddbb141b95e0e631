#pragma once

#include "noiserefine/core/rng.hpp"
#include "noiserefine/core/schedule.hpp"
#include "noiserefine/nets/networks.hpp"
#include "noiserefine/sampler/sampler.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace nr {

/// Gaussian noise, its class, the guided image it denoises to, and the guidance used.
struct NoisePair {
  Tensor xT;
  Condition c;
  Tensor x0_guide;
  double w_used = 0.0;
  double s_used = 0.0;
  double quality = 0.0;

  friend bool operator==(const NoisePair&, const NoisePair&) = default;
};

struct PairGenConfig {
  int guided_steps = 20;
  double w_lo = 3.0, w_hi = 5.0;
  double s_lo = 2.0, s_hi = 3.0;
  int quality_draws = 8;
  std::size_t chunk = 64;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Negated class-conditional denoising loss, averaged over `draws` (t, eps) samples
/// per column. Column j draws from `rngs[j]`. Higher is better.
std::vector<double> quality_scores(const Matrix& x0, std::span<const Condition> conds, const NoisePredictor& net,
                                   const NoiseSchedule& schedule, std::span<RngStream> rngs, int draws = 8);
double quality_score(const Tensor& x0, Condition c, const NoisePredictor& net, const NoiseSchedule& schedule,
                     RngStream& rng, int draws = 8);

/// Record i draws class, x_T, w and s from stream ("pairs", i) of cfg.seed, so the
/// sampled inputs are independent of chunking and thread count. Images and scores
/// match across chunk sizes up to round-off of batched products. `degraded` may be
/// null only when the s range is [0, 0].
std::vector<NoisePair> gen_pairs(const NoisePredictor& net, const NoisePredictor* degraded,
                                 const NoiseSchedule& schedule, const PairGenConfig& cfg, std::size_t count,
                                 std::size_t first_index = 0);

/// Keeps the top q percent by quality (floor of q * n / 100, at least one),
/// preserving input order among the kept records.
std::vector<NoisePair> filter_pairs(const std::vector<NoisePair>& pairs, double q);

/// index.json plus one NFTENSOR blob per tensor field (xT.nft, x0_guide.nft).
void save_pair_archive(const std::filesystem::path& dir, const std::vector<NoisePair>& pairs);
std::vector<NoisePair> load_pair_archive(const std::filesystem::path& dir);

}  // namespace nr
