#include <gtest/gtest.h>

#include <cmath>

#include "fednerf/adam.hpp"

namespace fednerf {
namespace {

std::vector<LayerParams> one_layer(std::vector<double> w, std::vector<double> b) {
  const std::size_t n = w.size();
  return {LayerParams{Matrix(1, n, std::move(w)), std::move(b)}};
}

TEST(Adam, FirstStepMatchesHandComputation) {
  AdamConfig c;
  c.lr = 0.1;
  auto params = one_layer({1.0, -2.0}, {0.5});
  auto grads = one_layer({0.2, -4.0}, {1e-3});
  AdamState s = AdamState::for_params(params, c);
  adam_step(s, params, grads);
  // After one step m̂ = g and v̂ = g², so each update is lr·g/(|g| + ε).
  auto expect = [&](double p0, double g) { return p0 - 0.1 * g / (std::fabs(g) + c.eps); };
  EXPECT_NEAR(params[0].weight(0, 0), expect(1.0, 0.2), 1e-12);
  EXPECT_NEAR(params[0].weight(0, 1), expect(-2.0, -4.0), 1e-12);
  EXPECT_NEAR(params[0].bias[0], expect(0.5, 1e-3), 1e-12);
}

TEST(Adam, SecondStepMatchesHandComputation) {
  AdamConfig c;
  c.lr = 0.01;
  auto params = one_layer({0.0}, {0.0});
  AdamState s = AdamState::for_params(params, c);
  adam_step(s, params, one_layer({1.0}, {0.0}));
  adam_step(s, params, one_layer({3.0}, {0.0}));
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * 3.0;
  const double v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0;
  const double mhat = m / (1 - 0.81);
  const double vhat = v / (1 - 0.999 * 0.999);
  const double first = -0.01 * 1.0 / (1.0 + c.eps);
  EXPECT_NEAR(params[0].weight(0, 0), first - 0.01 * mhat / (std::sqrt(vhat) + c.eps), 1e-12);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto params = one_layer({1.0, 2.0, 3.0}, {4.0});
  const auto before = params;
  AdamState s = AdamState::for_params(params);
  for (int i = 0; i < 5; ++i) adam_step(s, params, one_layer({0, 0, 0}, {0}));
  EXPECT_EQ(params, before);
}

TEST(Adam, IdenticalGradientsGiveIdenticalUpdates) {
  auto a = one_layer({1.0, 1.0}, {0.0});
  auto b = a;
  AdamState sa = AdamState::for_params(a);
  AdamState sb = AdamState::for_params(b);
  for (int i = 0; i < 10; ++i) {
    const auto g = one_layer({0.1 * i, -0.3}, {0.2});
    adam_step(sa, a, g);
    adam_step(sb, b, g);
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0].weight(0, 1), b[0].weight(0, 1));
}

TEST(Adam, DecayScalesLearningRate) {
  AdamConfig c;
  c.lr = 0.1;
  c.decay_rate = 0.5;
  c.decay_steps = 1.0;
  auto params = one_layer({0.0}, {0.0});
  AdamState s = AdamState::for_params(params, c);
  adam_step(s, params, one_layer({1.0}, {0.0}));
  EXPECT_NEAR(params[0].weight(0, 0), -0.05 / (1.0 + c.eps), 1e-12);
}

TEST(Adam, RejectsShapeMismatch) {
  auto params = one_layer({1.0, 2.0}, {0.0});
  AdamState s = AdamState::for_params(params);
  EXPECT_THROW(adam_step(s, params, one_layer({1.0}, {0.0})), std::invalid_argument);
}

}  // namespace
}  // namespace fednerf
