#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fednerf/adam.hpp"
#include "fednerf/net.hpp"
#include "fednerf/radiance.hpp"

namespace fednerf {

/// Raised when a loss or gradient becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Task task = Task::nerf3d;
  std::size_t batch_size = 256;
  RenderConfig render;
  AdamConfig adam;
  bool stratified = true;  // false: midpoint samples, no sampling noise
};

/// Rays (nerf3d) or plane points (image2d) with their target colours.
struct TrainBatch {
  std::vector<Ray> rays;
  Matrix points;   // B×2, image2d only
  Matrix targets;  // B×3
  std::size_t size() const { return targets.rows(); }
};

/// MSE between rendered and target colours, averaged over rays and
/// channels; coarse and fine losses are summed. When `grads` is non-null the
/// gradient w.r.t. every learnable tensor of `model` is accumulated into it.
double render_loss(const Mlp& model, const TrainBatch& batch, const TrainConfig& cfg, Rng* rng, Gradients* grads);

/// Draws one batch: an image uniformly from `pool`, then batch_size pixels
/// uniformly from it.
TrainBatch sample_batch(std::span<const PosedImage* const> pool, const TrainConfig& cfg, Rng& rng);

struct TrainLog {
  std::vector<double> losses;
};

/// Standard training of a dense model on the union of `datasets`.
/// A fresh optimiser is used unless `state` is supplied.
void train(NetworkParams& params, std::span<const ClientDataset> datasets, std::size_t iters, std::uint64_t seed,
           const TrainConfig& cfg, AdamState* state = nullptr, TrainLog* log = nullptr);

/// Training of the learnable set C only; `frozen` is read-only.
void sparse_train(const NetArch& arch, LearnableSet& learnable, const FrozenSet& frozen, const ClientDataset& data,
                  std::size_t iters, std::uint64_t seed, const TrainConfig& cfg, AdamState& state,
                  TrainLog* log = nullptr);

}  // namespace fednerf
