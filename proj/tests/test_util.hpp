#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "fednerf/linalg.hpp"
#include "fednerf/rng.hpp"

namespace fednerf::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.uniform(lo, hi);
  return m;
}

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

inline Matrix from_eigen(const Eigen::MatrixXd& e) {
  Matrix m(e.rows(), e.cols());
  for (Eigen::Index r = 0; r < e.rows(); ++r)
    for (Eigen::Index c = 0; c < e.cols(); ++c) m(r, c) = e(r, c);
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::fabs(a.data()[i] - b.data()[i]));
  return d;
}

inline Matrix reconstruct(const SvdResult& d) {
  Matrix us = d.left;
  for (std::size_t r = 0; r < us.rows(); ++r)
    for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= d.singular[c];
  return us * d.right.transposed();
}

}  // namespace fednerf::testing

#include "fednerf/net.hpp"

namespace fednerf::testing {

/// Radiance architecture small enough for finite-difference checks.
inline NetArch tiny_arch(bool fine = false) {
  NetArch a;
  a.trunk_depth = 3;
  a.trunk_width = 6;
  a.skip_layers = {2};
  a.pos_freqs_x = 2;
  a.pos_freqs_d = 1;
  a.use_fine = fine;
  return a;
}

inline NetArch tiny_image_arch() {
  NetArch a = tiny_arch();
  a.input_dims = 2;
  a.heads = HeadKind::rgb;
  a.pos_freqs_d = 0;
  return a;
}

}  // namespace fednerf::testing

#include <algorithm>

#include "fednerf/trainer.hpp"

namespace fednerf::testing {

/// Sign of every ReLU pre-activation the loss of `batch` evaluates (midpoint
/// sampling only). Central differences are valid only while this pattern is
/// unchanged by the perturbation.
inline std::vector<bool> relu_pattern(const Mlp& model, const TrainBatch& batch, const TrainConfig& cfg) {
  std::vector<bool> bits;
  const NetArch& arch = model.arch();
  auto collect = [&](const Mlp::Cache& c) {
    const std::size_t depth = arch.trunk_depth;
    for (std::size_t i = 0; i < c.pre.size(); ++i) {
      const bool relu = i < depth || (arch.heads == HeadKind::radiance && i == depth + 2);
      if (!relu) continue;
      for (double x : c.pre[i].data()) bits.push_back(x > 0.0);
    }
  };
  if (cfg.task == Task::image2d) {
    Mlp::Cache c;
    model.forward(0, batch.points, nullptr, &c);
    collect(c);
    return bits;
  }
  const RenderConfig& rc = cfg.render;
  auto points_for = [&](const std::vector<std::vector<double>>& depths, Matrix& pos, Matrix& dir) {
    std::size_t total = 0;
    for (const auto& d : depths) total += d.size();
    pos = Matrix(total, 3);
    dir = Matrix(total, 3);
    std::size_t p = 0;
    for (std::size_t r = 0; r < depths.size(); ++r)
      for (double t : depths[r]) {
        for (std::size_t k = 0; k < 3; ++k) {
          pos(p, k) = batch.rays[r].origin[k] + t * batch.rays[r].direction[k];
          dir(p, k) = batch.rays[r].direction[k];
        }
        ++p;
      }
  };
  std::vector<std::vector<double>> depths;
  for (const auto& ray : batch.rays) depths.push_back(stratified_samples(ray, rc.n_coarse, nullptr));
  Matrix pos, dir;
  points_for(depths, pos, dir);
  Mlp::Cache c;
  const Mlp::Output out = model.forward(0, pos, &dir, &c);
  collect(c);
  if (!(arch.use_fine && rc.n_fine > 0)) return bits;
  std::vector<std::vector<double>> fine(batch.rays.size());
  std::size_t offset = 0;
  for (std::size_t r = 0; r < batch.rays.size(); ++r) {
    const std::size_t n = depths[r].size();
    const auto comp = composite(std::span(out.sigma).subspan(offset, n),
                                std::span(out.rgb.data()).subspan(offset * 3, n * 3), depths[r], rc.composite);
    std::vector<double> edges(rc.n_coarse + 1);
    for (std::size_t i = 0; i <= rc.n_coarse; ++i) {
      edges[i] = batch.rays[r].near + (batch.rays[r].far - batch.rays[r].near) * static_cast<double>(i) /
                                          static_cast<double>(rc.n_coarse);
    }
    const auto extra = hierarchical_samples(comp.weights, edges, rc.n_fine, nullptr);
    fine[r].resize(n + extra.size());
    std::merge(depths[r].begin(), depths[r].end(), extra.begin(), extra.end(), fine[r].begin());
    offset += n;
  }
  points_for(fine, pos, dir);
  Mlp::Cache fc;
  model.forward(1, pos, &dir, &fc);
  collect(fc);
  return bits;
}

struct GradCheckResult {
  double worst = 0.0;
  std::size_t probes = 0;
  std::size_t rejected = 0;  // perturbation crossed a ReLU kink
};

/// Central differences of render_loss on `per_layer` weight entries and one
/// bias entry of each layer in [first, last).
inline GradCheckResult check_render_gradients(const Mlp& model, std::vector<LayerParams>& learnable,
                                              const TrainBatch& batch, const TrainConfig& cfg, std::uint64_t seed,
                                              std::size_t first, std::size_t last, double h,
                                              std::size_t per_layer = 3) {
  Gradients grads = zero_gradients_like(learnable);
  render_loss(model, batch, cfg, nullptr, &grads);
  const std::vector<bool> pattern = relu_pattern(model, batch, cfg);
  Rng pick(seed);
  GradCheckResult res;
  for (std::size_t z = first; z < last; ++z) {
    for (std::size_t k = 0; k <= per_layer; ++k) {
      const bool bias = k == per_layer;
      std::vector<double>& target = bias ? learnable[z].bias : learnable[z].weight.data();
      const std::vector<double>& g = bias ? grads[z].bias : grads[z].weight.data();
      for (int attempt = 0; attempt < 20; ++attempt) {
        const std::size_t i = pick.below(target.size());
        const double saved = target[i];
        target[i] = saved + h;
        const double up = render_loss(model, batch, cfg, nullptr, nullptr);
        const bool up_ok = relu_pattern(model, batch, cfg) == pattern;
        target[i] = saved - h;
        const double down = render_loss(model, batch, cfg, nullptr, nullptr);
        const bool down_ok = relu_pattern(model, batch, cfg) == pattern;
        target[i] = saved;
        if (!up_ok || !down_ok) {
          ++res.rejected;
          continue;
        }
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max(std::fabs(numeric), std::fabs(g[i]));
        // Entries with no measurable gradient are skipped rather than compared relatively.
        if (scale > 1e-10) res.worst = std::max(res.worst, std::fabs(numeric - g[i]) / scale);
        ++res.probes;
        break;
      }
    }
  }
  return res;
}

}  // namespace fednerf::testing
