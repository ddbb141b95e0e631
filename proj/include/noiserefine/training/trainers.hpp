#pragma once

#include "noiserefine/core/rng.hpp"
#include "noiserefine/core/schedule.hpp"
#include "noiserefine/nets/adam.hpp"
#include "noiserefine/nets/networks.hpp"
#include "noiserefine/nets/tape.hpp"
#include "noiserefine/training/dataset.hpp"
#include "noiserefine/training/pairs.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nr {

/// One row of a training log (CSV columns step, loss, grad_norm, wall_ms).
struct TrainLogRow {
  long step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

using LogSink = std::function<void(const TrainLogRow&)>;

std::string log_csv(const std::vector<TrainLogRow>& rows);

enum class LrSchedule { constant, cosine };

/// Learning rate at `step` (1-based) of `total`; cosine decays from `lr` towards 0.
double scheduled_lr(double lr, LrSchedule schedule, long step, long total);

struct BaseTrainConfig {
  MlpSpec spec;
  long steps = 20000;
  int batch = 64;
  double lr = 1e-3;
  LrSchedule lr_schedule = LrSchedule::cosine;
  Parameterization parameterization = Parameterization::noise;
  double cond_dropout = 0.1;    // probability of training on the null condition
  double early_fraction = 0.05; // degraded checkpoint taken at this fraction of steps
  std::uint64_t seed = 0;
  long log_every = 100;
};

struct BaseTrainResult {
  DenoiserNet model;
  DenoiserNet early;
  std::vector<TrainLogRow> log;
};

/// Minimizes the epsilon-prediction MSE with uniformly drawn t in [1, T].
BaseTrainResult train_base(const ShapesDataset& data, const NoiseSchedule& schedule, const BaseTrainConfig& cfg,
                           const LogSink& on_log = {});

enum class GradientMode { msd, full };

/// Records x_T -> ... -> x_0 on `tape`. In msd mode every predictor output is
/// detached, so gradients reach x_T only through the a_t chain.
ad::Var rollout_on_tape(ad::Tape& tape, ad::Var x_start, std::span<const Condition> conds, const NoisePredictor& net,
                        const NoiseSchedule& schedule, int steps, GradientMode mode, Vector* net_grad = nullptr);

/// Refines x_T with `refiner`, then rolls out guidance-free on the tape.
ad::Var msd_rollout(ad::Tape& tape, const RefinerNet& refiner, Vector* refiner_grad, const NoisePredictor& net,
                    const Matrix& xT, std::span<const Condition> conds, const NoiseSchedule& schedule, int steps,
                    GradientMode mode = GradientMode::msd, Vector* net_grad = nullptr);

/// Loss ||x0_hat - target||^2 (mean over entries) and its gradient w.r.t. refiner parameters.
struct RefinerGradient {
  double loss = 0.0;
  Vector grad;
  Matrix x0;
};

RefinerGradient refiner_gradient(const RefinerNet& refiner, const NoisePredictor& net, const Matrix& xT,
                                 std::span<const Condition> conds, const Matrix& target, const NoiseSchedule& schedule,
                                 int steps, GradientMode mode);

struct PairBatch {
  Matrix xT;
  std::vector<Condition> conds;
  Matrix target;
};

/// Supplies (x_T, c, x0_guide) training batches.
class PairSource {
 public:
  virtual ~PairSource() = default;
  virtual PairBatch next(RngStream& rng, std::size_t batch) = 0;
};

/// Samples records uniformly with replacement from a stored pair list.
class StoredPairSource final : public PairSource {
 public:
  explicit StoredPairSource(std::vector<NoisePair> pairs);
  PairBatch next(RngStream& rng, std::size_t batch) override;
  std::size_t size() const { return pairs_.size(); }

 private:
  std::vector<NoisePair> pairs_;
};

/// Generates fresh guided pairs for every batch.
class OnlinePairSource final : public PairSource {
 public:
  OnlinePairSource(const NoisePredictor& net, const NoisePredictor* degraded, const NoiseSchedule& schedule,
                   PairGenConfig cfg);
  PairBatch next(RngStream& rng, std::size_t batch) override;

 private:
  const NoisePredictor& net_;
  const NoisePredictor* degraded_;
  const NoiseSchedule& schedule_;
  PairGenConfig cfg_;
  std::size_t produced_ = 0;
};

struct RefinerTrainConfig {
  long steps = 2000;
  int batch = 64;
  double lr = 1e-4;
  LrSchedule lr_schedule = LrSchedule::constant;
  int sampler_steps = 10;
  GradientMode mode = GradientMode::msd;
  std::uint64_t seed = 0;
  long log_every = 50;
};

struct RefinerTrainResult {
  RefinerNet refiner;
  std::vector<TrainLogRow> log;
};

RefinerTrainResult train_refiner(RefinerNet refiner, const NoisePredictor& net, PairSource& source,
                                 const NoiseSchedule& schedule, const RefinerTrainConfig& cfg,
                                 const LogSink& on_log = {});

}  // namespace nr
