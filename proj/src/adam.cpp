#include "fednerf/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace fednerf {

AdamState AdamState::for_params(const std::vector<LayerParams>& learnable, AdamConfig config) {
  AdamState s;
  s.config = config;
  s.first = zero_gradients_like(learnable);
  s.second = zero_gradients_like(learnable);
  return s;
}

bool AdamState::matches(const std::vector<LayerParams>& learnable) const {
  if (first.size() != learnable.size()) return false;
  for (std::size_t z = 0; z < learnable.size(); ++z) {
    if (first[z].weight.rows() != learnable[z].weight.rows() || first[z].weight.cols() != learnable[z].weight.cols() ||
        first[z].bias.size() != learnable[z].bias.size()) {
      return false;
    }
  }
  return true;
}

namespace {

void update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m, std::vector<double>& v,
            double b1, double b2, double step_size, double c2, double eps) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    p[i] -= step_size * m[i] / (std::sqrt(v[i] / c2) + eps);
  }
}

}  // namespace

void adam_step(AdamState& state, std::vector<LayerParams>& params, const Gradients& grads) {
  AdamState shape_of_grads;
  shape_of_grads.first = grads;
  if (!state.matches(params) || !shape_of_grads.matches(params)) {
    throw std::invalid_argument("adam_step: state, parameter, and gradient shapes differ");
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  double lr = c.lr;
  if (c.decay_rate != 1.0) lr *= std::pow(c.decay_rate, t / c.decay_steps);
  const double c1 = 1.0 - std::pow(c.beta1, t);
  const double c2 = 1.0 - std::pow(c.beta2, t);
  const double step_size = lr / c1;
  for (std::size_t z = 0; z < params.size(); ++z) {
    update(params[z].weight.data(), grads[z].weight.data(), state.first[z].weight.data(),
           state.second[z].weight.data(), c.beta1, c.beta2, step_size, c2, c.eps);
    update(params[z].bias, grads[z].bias, state.first[z].bias, state.second[z].bias, c.beta1, c.beta2, step_size, c2,
           c.eps);
  }
}

}  // namespace fednerf
