#include "noiserefine/training/trainers.hpp"

#include "noiserefine/core/errors.hpp"
#include "noiserefine/sampler/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

namespace nr {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void check_loss(double loss, long step, const char* who) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(who) + ": loss diverged (non-finite) at step " + std::to_string(step));
  }
}

}  // namespace

std::string log_csv(const std::vector<TrainLogRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss,grad_norm,wall_ms\n";
  for (const auto& r : rows) os << r.step << ',' << r.loss << ',' << r.grad_norm << ',' << r.wall_ms << '\n';
  return os.str();
}

double scheduled_lr(double lr, LrSchedule schedule, long step, long total) {
  if (schedule == LrSchedule::constant || total <= 1) return lr;
  const double progress = static_cast<double>(step - 1) / static_cast<double>(total);
  // Floor keeps the final steps strictly positive for Adam's lr > 0 contract.
  return std::max(lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)), lr * 1e-4);
}

BaseTrainResult train_base(const ShapesDataset& data, const NoiseSchedule& schedule, const BaseTrainConfig& cfg,
                           const LogSink& on_log) {
  if (cfg.steps < 1 || cfg.batch < 1) throw InvalidArgument("train_base: steps and batch must be positive");
  if (cfg.spec.steps != schedule.steps()) throw InvalidArgument("train_base: network T differs from schedule T");
  RngStream init_rng(cfg.seed, RngStream::stream_id("base.init"));
  RngStream rng(cfg.seed, RngStream::stream_id("base.batches"));
  DenoiserNet net = cfg.parameterization == Parameterization::velocity
                        ? DenoiserNet::random(cfg.spec, schedule, init_rng, true)
                        : DenoiserNet::random(cfg.spec, init_rng, true);
  std::optional<DenoiserNet> early;
  const long early_step = std::max<long>(1, std::lround(cfg.early_fraction * static_cast<double>(cfg.steps)));
  AdamState adam;
  AdamConfig adam_cfg{cfg.lr};
  std::vector<TrainLogRow> log;
  Vector grad(net.backbone().params().size());
  std::vector<int> ts(static_cast<std::size_t>(cfg.batch));
  const auto start = Clock::now();

  for (long step = 1; step <= cfg.steps; ++step) {
    ShapesDataset::Batch b = data.batch(rng, static_cast<std::size_t>(cfg.batch));
    Matrix eps = rng.normal_matrix(b.images.rows(), b.images.cols());
    Matrix xt(b.images.rows(), b.images.cols());
    for (int j = 0; j < cfg.batch; ++j) {
      const int t = rng.uniform_int(1, schedule.steps());
      ts[static_cast<std::size_t>(j)] = t;
      const double a = schedule.alpha(t);
      xt.col(j) = std::sqrt(a) * b.images.col(j) + std::sqrt(1.0 - a) * eps.col(j);
      if (rng.uniform(0.0, 1.0) < cfg.cond_dropout) b.conds[static_cast<std::size_t>(j)] = Condition::null();
    }
    grad.setZero();
    ad::Tape tape;
    ad::Var pred = net.predict_columns(tape, tape.constant(std::move(xt)), ts, b.conds, &grad);
    ad::Var loss = tape.mean_squared_error(pred, eps);
    const double loss_value = loss.value()(0, 0);
    check_loss(loss_value, step, "train_base");
    tape.backward(loss);
    adam_cfg.lr = scheduled_lr(cfg.lr, cfg.lr_schedule, step, cfg.steps);
    adam_step(net.backbone().params(), grad, adam, adam_cfg, net.backbone().blocks());
    if (step == early_step) early = net;
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1 || step == cfg.steps)) {
      TrainLogRow row{step, loss_value, grad.norm(), elapsed_ms(start)};
      log.push_back(row);
      if (on_log) on_log(row);
    }
  }
  return BaseTrainResult{std::move(net), std::move(*early), std::move(log)};
}

ad::Var rollout_on_tape(ad::Tape& tape, ad::Var x_start, std::span<const Condition> conds, const NoisePredictor& net,
                        const NoiseSchedule& schedule, int steps, GradientMode mode, Vector* net_grad) {
  ad::Var x = x_start;
  for (const auto& [t, t_prev] : rollout_pairs(schedule, steps)) {
    const StepCoefficients c = schedule.coefficients(t, t_prev);
    ad::Var eps = net.predict(tape, x, t, conds, net_grad);
    if (mode == GradientMode::msd) eps = tape.detach(eps);
    x = tape.axpby(c.a, x, c.b, eps);
  }
  return x;
}

ad::Var msd_rollout(ad::Tape& tape, const RefinerNet& refiner, Vector* refiner_grad, const NoisePredictor& net,
                    const Matrix& xT, std::span<const Condition> conds, const NoiseSchedule& schedule, int steps,
                    GradientMode mode, Vector* net_grad) {
  ad::Var refined = refiner.refine(tape, tape.constant(xT), conds, refiner_grad);
  return rollout_on_tape(tape, refined, conds, net, schedule, steps, mode, net_grad);
}

RefinerGradient refiner_gradient(const RefinerNet& refiner, const NoisePredictor& net, const Matrix& xT,
                                 std::span<const Condition> conds, const Matrix& target, const NoiseSchedule& schedule,
                                 int steps, GradientMode mode) {
  RefinerGradient out;
  out.grad = Vector::Zero(refiner.backbone().params().size());
  ad::Tape tape;
  ad::Var x0 = msd_rollout(tape, refiner, &out.grad, net, xT, conds, schedule, steps, mode);
  ad::Var loss = tape.mean_squared_error(x0, target);
  out.loss = loss.value()(0, 0);
  out.x0 = x0.value();
  tape.backward(loss);
  return out;
}

StoredPairSource::StoredPairSource(std::vector<NoisePair> pairs) : pairs_(std::move(pairs)) {
  if (pairs_.empty()) throw InvalidArgument("pair source: no pairs");
}

PairBatch StoredPairSource::next(RngStream& rng, std::size_t batch) {
  const auto rows = static_cast<Eigen::Index>(pairs_.front().xT.size());
  PairBatch b{Matrix(rows, static_cast<Eigen::Index>(batch)), {}, Matrix(rows, static_cast<Eigen::Index>(batch))};
  for (std::size_t j = 0; j < batch; ++j) {
    const NoisePair& p = pairs_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pairs_.size()) - 1))];
    b.xT.col(static_cast<Eigen::Index>(j)) = p.xT.vec();
    b.target.col(static_cast<Eigen::Index>(j)) = p.x0_guide.vec();
    b.conds.push_back(p.c);
  }
  return b;
}

OnlinePairSource::OnlinePairSource(const NoisePredictor& net, const NoisePredictor* degraded,
                                   const NoiseSchedule& schedule, PairGenConfig cfg)
    : net_(net), degraded_(degraded), schedule_(schedule), cfg_(cfg) {}

PairBatch OnlinePairSource::next(RngStream&, std::size_t batch) {
  PairGenConfig cfg = cfg_;
  cfg.chunk = batch;
  const std::vector<NoisePair> pairs = gen_pairs(net_, degraded_, schedule_, cfg, batch, produced_);
  produced_ += batch;
  const auto rows = static_cast<Eigen::Index>(pairs.front().xT.size());
  PairBatch b{Matrix(rows, static_cast<Eigen::Index>(batch)), {}, Matrix(rows, static_cast<Eigen::Index>(batch))};
  for (std::size_t j = 0; j < batch; ++j) {
    b.xT.col(static_cast<Eigen::Index>(j)) = pairs[j].xT.vec();
    b.target.col(static_cast<Eigen::Index>(j)) = pairs[j].x0_guide.vec();
    b.conds.push_back(pairs[j].c);
  }
  return b;
}

RefinerTrainResult train_refiner(RefinerNet refiner, const NoisePredictor& net, PairSource& source,
                                 const NoiseSchedule& schedule, const RefinerTrainConfig& cfg, const LogSink& on_log) {
  if (cfg.steps < 1 || cfg.batch < 1) throw InvalidArgument("train_refiner: steps and batch must be positive");
  RngStream rng(cfg.seed, RngStream::stream_id("refiner.batches"));
  AdamState adam;
  AdamConfig adam_cfg{cfg.lr};
  std::vector<TrainLogRow> log;
  const auto start = Clock::now();
  for (long step = 1; step <= cfg.steps; ++step) {
    const PairBatch b = source.next(rng, static_cast<std::size_t>(cfg.batch));
    RefinerGradient g = refiner_gradient(refiner, net, b.xT, b.conds, b.target, schedule, cfg.sampler_steps, cfg.mode);
    check_loss(g.loss, step, "train_refiner");
    adam_cfg.lr = scheduled_lr(cfg.lr, cfg.lr_schedule, step, cfg.steps);
    adam_step(refiner.backbone().params(), g.grad, adam, adam_cfg, refiner.backbone().blocks());
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1 || step == cfg.steps)) {
      TrainLogRow row{step, g.loss, g.grad.norm(), elapsed_ms(start)};
      log.push_back(row);
      if (on_log) on_log(row);
    }
  }
  return RefinerTrainResult{std::move(refiner), std::move(log)};
}

}  // namespace nr
