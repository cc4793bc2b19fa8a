#include "fednerf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fednerf {

namespace {

struct RaySamples {
  std::vector<std::vector<double>> depths;
  Matrix positions;
  Matrix directions;
};

RaySamples build_samples(std::span<const Ray> rays, std::vector<std::vector<double>> depths) {
  std::size_t total = 0;
  for (const auto& d : depths) total += d.size();
  RaySamples s{std::move(depths), Matrix(total, 3), Matrix(total, 3)};
  std::size_t p = 0;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    for (double t : s.depths[r]) {
      for (std::size_t c = 0; c < 3; ++c) {
        s.positions(p, c) = rays[r].origin[c] + t * rays[r].direction[c];
        s.directions(p, c) = rays[r].direction[c];
      }
      ++p;
    }
  }
  return s;
}

// Composites every ray of one sub-network pass, returns the summed squared
// error and (optionally) the per-point gradients.
struct PassResult {
  double sse = 0.0;
  std::vector<std::vector<double>> weights;
};

PassResult composite_pass(const Mlp::Output& out, const RaySamples& s, const TrainBatch& batch,
                          const TrainConfig& cfg, double grad_scale, std::vector<double>* dsigma, Matrix* drgb) {
  PassResult res;
  res.weights.resize(batch.rays.size());
  if (dsigma) {
    dsigma->assign(out.sigma.size(), 0.0);
    *drgb = Matrix(out.rgb.rows(), 3);
  }
  std::size_t offset = 0;
  for (std::size_t r = 0; r < batch.rays.size(); ++r) {
    const std::size_t n = s.depths[r].size();
    std::span<const double> sig(out.sigma.data() + offset, n);
    std::span<const double> col(out.rgb.data().data() + offset * 3, n * 3);
    CompositeResult c = composite(sig, col, s.depths[r], cfg.render.composite);
    Vec3 dc{};
    for (std::size_t k = 0; k < 3; ++k) {
      const double e = c.rgb[k] - batch.targets(r, k);
      res.sse += e * e;
      dc[k] = grad_scale * e;
    }
    if (dsigma) {
      composite_backward(sig, col, s.depths[r], cfg.render.composite, dc,
                         std::span<double>(dsigma->data() + offset, n),
                         std::span<double>(drgb->data().data() + offset * 3, n * 3));
    }
    res.weights[r] = std::move(c.weights);
    offset += n;
  }
  return res;
}

void require_finite_loss(double loss) {
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "training diverged: loss = " << loss;
    throw DivergenceError(msg.str());
  }
}

}  // namespace

double render_loss(const Mlp& model, const TrainBatch& batch, const TrainConfig& cfg, Rng* rng, Gradients* grads) {
  const std::size_t b = batch.size();
  if (b == 0) throw std::invalid_argument("render_loss: empty batch");
  const double denom = 3.0 * static_cast<double>(b);
  const double grad_scale = 2.0 / denom;
  Rng* sample_rng = cfg.stratified ? rng : nullptr;

  if (cfg.task == Task::image2d) {
    Mlp::Cache cache;
    Mlp::Output out = model.forward(0, batch.points, nullptr, grads ? &cache : nullptr);
    double sse = 0.0;
    Matrix drgb(b, 3);
    for (std::size_t i = 0; i < out.rgb.size(); ++i) {
      const double e = out.rgb.data()[i] - batch.targets.data()[i];
      sse += e * e;
      drgb.data()[i] = grad_scale * e;
    }
    const double loss = sse / denom;
    require_finite_loss(loss);
    if (grads) model.backward(0, out, cache, {}, drgb, *grads);
    return loss;
  }

  const RenderConfig& rc = cfg.render;
  std::vector<std::vector<double>> depths(b);
  for (std::size_t r = 0; r < b; ++r) depths[r] = stratified_samples(batch.rays[r], rc.n_coarse, sample_rng);
  RaySamples coarse = build_samples(batch.rays, std::move(depths));

  Mlp::Cache cache;
  Mlp::Output out = model.forward(0, coarse.positions, &coarse.directions, grads ? &cache : nullptr);
  std::vector<double> dsigma;
  Matrix drgb;
  PassResult pass = composite_pass(out, coarse, batch, cfg, grad_scale, grads ? &dsigma : nullptr, &drgb);
  double loss = pass.sse / denom;
  if (grads) model.backward(0, out, cache, dsigma, drgb, *grads);

  if (model.arch().use_fine && rc.n_fine > 0) {
    std::vector<std::vector<double>> fine_depths(b);
    for (std::size_t r = 0; r < b; ++r) {
      const Ray& ray = batch.rays[r];
      std::vector<double> edges(rc.n_coarse + 1);
      for (std::size_t i = 0; i <= rc.n_coarse; ++i) {
        edges[i] = ray.near + (ray.far - ray.near) * static_cast<double>(i) / static_cast<double>(rc.n_coarse);
      }
      auto extra = hierarchical_samples(pass.weights[r], edges, rc.n_fine, sample_rng);
      auto& merged = fine_depths[r];
      merged.resize(rc.n_coarse + rc.n_fine);
      std::merge(coarse.depths[r].begin(), coarse.depths[r].end(), extra.begin(), extra.end(), merged.begin());
    }
    RaySamples fine = build_samples(batch.rays, std::move(fine_depths));
    Mlp::Cache fine_cache;
    Mlp::Output fout = model.forward(1, fine.positions, &fine.directions, grads ? &fine_cache : nullptr);
    PassResult fpass = composite_pass(fout, fine, batch, cfg, grad_scale, grads ? &dsigma : nullptr, &drgb);
    loss += fpass.sse / denom;
    if (grads) model.backward(1, fout, fine_cache, dsigma, drgb, *grads);
  }
  require_finite_loss(loss);
  return loss;
}

TrainBatch sample_batch(std::span<const PosedImage* const> pool, const TrainConfig& cfg, Rng& rng) {
  if (pool.empty()) throw std::invalid_argument("sample_batch: no images");
  const PosedImage& img = *pool[rng.below(pool.size())];
  const std::size_t w = img.pixels.width;
  const std::size_t h = img.pixels.height;
  const std::size_t b = cfg.batch_size;
  TrainBatch batch;
  batch.targets = Matrix(b, 3);
  if (cfg.task == Task::image2d) batch.points = Matrix(b, 2);
  else batch.rays.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const PixelCoord px{static_cast<std::size_t>(rng.below(w)), static_cast<std::size_t>(rng.below(h))};
    if (cfg.task == Task::image2d) {
      auto q = plane_point(img.pose, img.intrinsics, w, h, px);
      batch.points(i, 0) = q[0];
      batch.points(i, 1) = q[1];
    } else {
      batch.rays.push_back(generate_ray(img, px, cfg.render.near, cfg.render.far));
    }
    for (std::size_t c = 0; c < 3; ++c) batch.targets(i, c) = img.pixels.at(px.x, px.y, c);
  }
  return batch;
}

namespace {

void run_training(const Mlp& model, std::vector<LayerParams>& learnable, std::span<const PosedImage* const> pool,
                  std::size_t iters, std::uint64_t seed, const TrainConfig& cfg, AdamState& state, TrainLog* log) {
  if (!state.matches(learnable)) throw std::invalid_argument("train: optimiser state does not match parameters");
  Rng rng(seed);
  Gradients grads = zero_gradients_like(learnable);
  for (std::size_t it = 0; it < iters; ++it) {
    TrainBatch batch = sample_batch(pool, cfg, rng);
    for (auto& g : grads) {
      std::fill(g.weight.data().begin(), g.weight.data().end(), 0.0);
      std::fill(g.bias.begin(), g.bias.end(), 0.0);
    }
    const double loss = render_loss(model, batch, cfg, &rng, &grads);
    for (const auto& g : grads) {
      for (double x : g.weight.data()) {
        if (!std::isfinite(x)) throw DivergenceError("training diverged: non-finite gradient at iteration " + std::to_string(it));
      }
    }
    adam_step(state, learnable, grads);
    if (log) log->losses.push_back(loss);
  }
}

std::vector<const PosedImage*> image_pool(std::span<const ClientDataset> datasets) {
  std::vector<const PosedImage*> pool;
  for (const auto& d : datasets)
    for (const auto& img : d.images) pool.push_back(&img);
  if (pool.empty()) throw std::invalid_argument("train: empty dataset");
  return pool;
}

void check_task(const NetArch& arch, const TrainConfig& cfg) {
  const bool radiance = arch.heads == HeadKind::radiance;
  if (radiance != (cfg.task == Task::nerf3d)) {
    throw std::invalid_argument("train: network heads do not match task " + to_string(cfg.task));
  }
}

}  // namespace

void train(NetworkParams& params, std::span<const ClientDataset> datasets, std::size_t iters, std::uint64_t seed,
           const TrainConfig& cfg, AdamState* state, TrainLog* log) {
  auto pool = image_pool(datasets);
  check_task(params.arch, cfg);
  if (iters == 0) return;
  AdamState local = AdamState::for_params(params.layers, cfg.adam);
  AdamState& s = state ? *state : local;
  const Mlp model = Mlp::dense(params);
  run_training(model, params.layers, pool, iters, seed, cfg, s, log);
}

void sparse_train(const NetArch& arch, LearnableSet& learnable, const FrozenSet& frozen, const ClientDataset& data,
                  std::size_t iters, std::uint64_t seed, const TrainConfig& cfg, AdamState& state, TrainLog* log) {
  auto pool = image_pool(std::span<const ClientDataset>(&data, 1));
  check_task(arch, cfg);
  if (iters == 0) return;
  const Mlp model = Mlp::factorized(arch, learnable, frozen);
  run_training(model, learnable.layers, pool, iters, seed, cfg, state, log);
}

}  // namespace fednerf
