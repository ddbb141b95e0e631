#include "noiserefine/nets/adam.hpp"

#include "noiserefine/core/errors.hpp"

#include <cmath>

namespace nr {

namespace {

std::string offending_block(const Vector& grads, std::span<const ParamBlock> blocks) {
  for (const ParamBlock& b : blocks) {
    if (!grads.segment(b.offset, b.size).allFinite()) return b.name;
  }
  for (Eigen::Index i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) return "index " + std::to_string(i);
  }
  return "unknown";
}

}  // namespace

void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamConfig& cfg,
               std::span<const ParamBlock> blocks) {
  if (params.size() != grads.size()) throw ShapeMismatch("adam: parameter and gradient sizes differ");
  if (!(cfg.lr > 0.0)) throw InvalidArgument("adam: learning rate must be positive");
  if (!grads.allFinite()) throw NumericError("adam: non-finite gradient in " + offending_block(grads, blocks));
  if (state.m.size() != params.size()) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -= cfg.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

}  // namespace nr
