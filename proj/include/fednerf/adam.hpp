#pragma once

#include <cstdint>
#include <vector>

#include "fednerf/net.hpp"

namespace fednerf {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
  // Exponential decay lr·decay_rate^(step/decay_steps); off when decay_rate == 1.
  double decay_rate = 1.0;
  double decay_steps = 250000.0;
};

/// First/second moments mirroring a list of learnable layers.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<LayerParams> first;
  std::vector<LayerParams> second;

  static AdamState for_params(const std::vector<LayerParams>& learnable, AdamConfig config = {});
  bool matches(const std::vector<LayerParams>& learnable) const;
};

/// One Adam update of `params` from `grads` (same shapes as the state).
void adam_step(AdamState& state, std::vector<LayerParams>& params, const Gradients& grads);

}  // namespace fednerf
