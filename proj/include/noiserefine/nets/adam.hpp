#pragma once

#include "noiserefine/core/tensor.hpp"
#include "noiserefine/nets/networks.hpp"

#include <span>

namespace nr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
};

/// One bias-corrected Adam update in place. Non-finite gradients raise
/// NumericError naming the first offending block from `blocks` (or the index).
void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamConfig& cfg,
               std::span<const ParamBlock> blocks = {});

}  // namespace nr
