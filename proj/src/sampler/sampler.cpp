#include "noiserefine/sampler/sampler.hpp"

#include "noiserefine/core/errors.hpp"

#include <cmath>

namespace nr {

void GuidanceSpec::validate() const {
  if (!(cfg_scale >= 0.0) || !(degraded_scale >= 0.0)) throw InvalidArgument("guidance scales must be >= 0");
  if (degraded_scale > 0.0 && degraded == nullptr) {
    throw InvalidArgument("degraded guidance scale > 0 requires a degraded predictor");
  }
}

int GuidanceSpec::evaluations_per_step() const {
  return 1 + (cfg_scale != 0.0 ? 1 : 0) + (degraded_scale != 0.0 ? 1 : 0);
}

Matrix guided_score(const NoisePredictor& net, const Matrix& x, int t, std::span<const Condition> conds,
                    const GuidanceSpec& g, long* nfe) {
  g.validate();
  Matrix eps_c = net.predict(x, t, conds);
  long evals = 1;
  Matrix out = eps_c;
  if (g.cfg_scale != 0.0) {
    const std::vector<Condition> null_conds(conds.size(), Condition::null());
    out += g.cfg_scale * (eps_c - net.predict(x, t, null_conds));
    ++evals;
  }
  if (g.degraded_scale != 0.0) {
    out += g.degraded_scale * (eps_c - g.degraded->predict(x, t, conds));
    ++evals;
  }
  if (nfe != nullptr) *nfe += evals;
  require_finite(out, "guided_score");
  return out;
}

void ColumnGuidance::validate(Eigen::Index cols) const {
  if (cfg_scale.size() != cols || degraded_scale.size() != cols) throw ShapeMismatch("column guidance: one scale per column");
  if ((cfg_scale.array() < 0.0).any() || (degraded_scale.array() < 0.0).any() || !cfg_scale.allFinite() ||
      !degraded_scale.allFinite()) {
    throw InvalidArgument("guidance scales must be >= 0");
  }
  if ((degraded_scale.array() != 0.0).any() && degraded == nullptr) {
    throw InvalidArgument("degraded guidance scale > 0 requires a degraded predictor");
  }
}

Matrix guided_score(const NoisePredictor& net, const Matrix& x, int t, std::span<const Condition> conds,
                    const ColumnGuidance& g, long* nfe) {
  g.validate(x.cols());
  Matrix eps_c = net.predict(x, t, conds);
  long evals = 1;
  Matrix out = eps_c;
  if ((g.cfg_scale.array() != 0.0).any()) {
    const std::vector<Condition> null_conds(conds.size(), Condition::null());
    out += (eps_c - net.predict(x, t, null_conds)) * g.cfg_scale.asDiagonal();
    ++evals;
  }
  if ((g.degraded_scale.array() != 0.0).any()) {
    out += (eps_c - g.degraded->predict(x, t, conds)) * g.degraded_scale.asDiagonal();
    ++evals;
  }
  if (nfe != nullptr) *nfe += evals;
  require_finite(out, "guided_score");
  return out;
}

LatentState ddim_step(const LatentState& state, const Matrix& eps, const NoiseSchedule& schedule, int t_prev) {
  if (eps.rows() != state.x.rows() || eps.cols() != state.x.cols()) throw ShapeMismatch("ddim_step: eps shape");
  const StepCoefficients c = schedule.coefficients(state.t, t_prev);
  LatentState next{c.a * state.x + c.b * eps, t_prev};
  require_finite(next.x, "ddim_step");
  return next;
}

LatentState ddpm_step(const LatentState& state, const Matrix& eps, const NoiseSchedule& schedule, int t_prev,
                      const Matrix& z, double eta) {
  if (eps.rows() != state.x.rows() || eps.cols() != state.x.cols() || z.rows() != state.x.rows() ||
      z.cols() != state.x.cols()) {
    throw ShapeMismatch("ddpm_step: shape mismatch");
  }
  // validates the pair
  schedule.coefficients(state.t, t_prev);
  const double at = schedule.alpha(state.t);
  const double ap = schedule.alpha(t_prev);
  const double sigma = schedule.sigma(state.t, t_prev, eta);
  const Matrix x0_hat = (state.x - std::sqrt(1.0 - at) * eps) / std::sqrt(at);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ap - sigma * sigma));
  LatentState next{std::sqrt(ap) * x0_hat + dir * eps + sigma * z, t_prev};
  require_finite(next.x, "ddpm_step");
  return next;
}

std::vector<std::pair<int, int>> rollout_pairs(const NoiseSchedule& schedule, int steps) {
  const std::vector<int> ts = schedule.subsequence(steps);
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < ts.size(); ++i) pairs.emplace_back(ts[i], i + 1 < ts.size() ? ts[i + 1] : 0);
  return pairs;
}

Matrix denoise(const Matrix& xT, std::span<const Condition> conds, const NoisePredictor& net,
               const NoiseSchedule& schedule, int steps, const GuidanceSpec* guidance, SampleTrace* trace) {
  if (guidance != nullptr) guidance->validate();
  LatentState state{xT, schedule.steps()};
  if (trace != nullptr && trace->record) trace->states.push_back(state);
  for (const auto& [t, t_prev] : rollout_pairs(schedule, steps)) {
    Matrix eps;
    if (guidance != nullptr) {
      eps = guided_score(net, state.x, t, conds, *guidance, trace != nullptr ? &trace->nfe : nullptr);
    } else {
      eps = net.predict(state.x, t, conds);
      if (trace != nullptr) ++trace->nfe;
    }
    state = ddim_step(state, eps, schedule, t_prev);
    if (trace != nullptr && trace->record) trace->states.push_back(state);
  }
  return std::move(state.x);
}

Matrix denoise(const Matrix& xT, std::span<const Condition> conds, const NoisePredictor& net,
               const NoiseSchedule& schedule, int steps, const ColumnGuidance& guidance, SampleTrace* trace) {
  guidance.validate(xT.cols());
  LatentState state{xT, schedule.steps()};
  if (trace != nullptr && trace->record) trace->states.push_back(state);
  for (const auto& [t, t_prev] : rollout_pairs(schedule, steps)) {
    const Matrix eps = guided_score(net, state.x, t, conds, guidance, trace != nullptr ? &trace->nfe : nullptr);
    state = ddim_step(state, eps, schedule, t_prev);
    if (trace != nullptr && trace->record) trace->states.push_back(state);
  }
  return std::move(state.x);
}

Tensor denoise(const Tensor& xT, Condition c, const NoisePredictor& net, const NoiseSchedule& schedule, int steps,
               const GuidanceSpec* guidance) {
  const Condition conds[] = {c};
  const Matrix col = xT.vec();
  return Tensor::from_column(denoise(col, conds, net, schedule, steps, guidance), 0, xT.shape());
}

Matrix ddpm_sample(const Matrix& xT, std::span<const Condition> conds, const NoisePredictor& net,
                   const NoiseSchedule& schedule, int steps, RngStream& rng, double eta) {
  LatentState state{xT, schedule.steps()};
  for (const auto& [t, t_prev] : rollout_pairs(schedule, steps)) {
    const Matrix eps = net.predict(state.x, t, conds);
    const Matrix z = t_prev > 0 ? rng.normal_matrix(xT.rows(), xT.cols()) : Matrix::Zero(xT.rows(), xT.cols());
    state = ddpm_step(state, eps, schedule, t_prev, z, eta);
  }
  return std::move(state.x);
}

Matrix invert(const Matrix& x0, std::span<const Condition> conds, const NoisePredictor& net,
              const NoiseSchedule& schedule, const InversionConfig& cfg, SampleTrace* trace) {
  if (cfg.fixed_point_iters < 0) throw InvalidArgument("invert: fixed_point_iters must be >= 0");
  auto pairs = rollout_pairs(schedule, cfg.steps);
  Matrix x = x0;
  if (trace != nullptr && trace->record) trace->states.push_back({x, 0});
  for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) {
    const auto [t, t_prev] = *it;
    const StepCoefficients c = schedule.coefficients(t, t_prev);
    const Matrix& x_prev = x;
    Matrix cur = (x_prev - c.b * net.predict(x_prev, t, conds)) / c.a;
    long evals = 1;
    double last_residual = -1.0;
    int growth = 0;
    for (int k = 0; k < cfg.fixed_point_iters; ++k) {
      Matrix next = (x_prev - c.b * net.predict(cur, t, conds)) / c.a;
      ++evals;
      const double residual = (next - cur).norm();
      const double floor = 1e-12 * (1.0 + cur.norm());
      if (last_residual >= 0.0 && residual > last_residual && residual > floor) {
        if (++growth >= 3) {
          throw NumericError("invert: fixed-point iteration diverging at t=" + std::to_string(t) +
                             " (residual " + std::to_string(residual) + ")");
        }
      } else {
        growth = 0;
      }
      last_residual = residual;
      cur = std::move(next);
    }
    require_finite(cur, "invert");
    x = std::move(cur);
    if (trace != nullptr) {
      trace->nfe += evals;
      if (trace->record) trace->states.push_back({x, t});
    }
  }
  return x;
}

Tensor invert(const Tensor& x0, Condition c, const NoisePredictor& net, const NoiseSchedule& schedule,
              const InversionConfig& cfg) {
  const Condition conds[] = {c};
  const Matrix col = x0.vec();
  return Tensor::from_column(invert(col, conds, net, schedule, cfg), 0, x0.shape());
}

}  // namespace nr
