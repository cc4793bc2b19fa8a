#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fednerf/radiance.hpp"
#include "fednerf/scene.hpp"
#include "fednerf/trainer.hpp"
#include "test_util.hpp"

namespace fednerf {
namespace {

Pose translation_pose(const Vec3& t) {
  Pose p;
  p.m[3] = t[0];
  p.m[7] = t[1];
  p.m[11] = t[2];
  return p;
}

TEST(Rays, IdentityPoseCentrePixelLooksDownMinusZ) {
  const Intrinsics k{10.0, 2.0, 2.0};
  const Ray r = generate_ray(Pose{}, k, 5, 5, {2, 2}, 0.5, 4.0);
  EXPECT_EQ(r.origin, (Vec3{0, 0, 0}));
  EXPECT_NEAR(r.direction[0], 0.0, 1e-15);
  EXPECT_NEAR(r.direction[1], 0.0, 1e-15);
  EXPECT_NEAR(r.direction[2], -1.0, 1e-15);
  EXPECT_EQ(r.near, 0.5);
  EXPECT_EQ(r.far, 4.0);
}

TEST(Rays, OffCentrePixelDirection) {
  const Intrinsics k{2.0, 2.0, 2.0};
  const Ray r = generate_ray(Pose{}, k, 5, 5, {4, 0}, 0.0, 1.0);
  // Camera-space (1, 1, -1) normalised.
  const double s = 1.0 / std::sqrt(3.0);
  EXPECT_NEAR(r.direction[0], s, 1e-15);
  EXPECT_NEAR(r.direction[1], s, 1e-15);
  EXPECT_NEAR(r.direction[2], -s, 1e-15);
}

TEST(Rays, TranslationMovesOriginOnly) {
  const Intrinsics k{3.0, 1.5, 1.0};
  const Vec3 t{1.0, -2.0, 0.5};
  for (std::size_t x = 0; x < 4; ++x) {
    const Ray a = generate_ray(Pose{}, k, 4, 3, {x, 1}, 0, 1);
    const Ray b = generate_ray(translation_pose(t), k, 4, 3, {x, 1}, 0, 1);
    EXPECT_EQ(b.origin, t);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(a.direction[c], b.direction[c], 1e-15);
  }
}

TEST(Rays, NinetyDegreeYaw) {
  Pose p;
  // Rotation about +y by 90°: camera −z maps to world −x.
  p.m = {0, 0, 1, 0, 0, 1, 0, 0, -1, 0, 0, 0};
  const Ray r = generate_ray(p, {1.0, 0.0, 0.0}, 1, 1, {0, 0}, 0, 1);
  EXPECT_NEAR(r.direction[0], -1.0, 1e-15);
  EXPECT_NEAR(r.direction[1], 0.0, 1e-15);
  EXPECT_NEAR(r.direction[2], 0.0, 1e-15);
}

TEST(Rays, LookAtIsOrthonormalAndAimsAtTarget) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const Vec3 eye{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.5, 3)};
    const Pose p = look_at(eye, {0, 0, 0}, {0, 0, 1});
    EXPECT_LE(p.orthonormality_error(), 1e-12);
    const Ray r = generate_ray(p, {1.0, 0.0, 0.0}, 1, 1, {0, 0}, 0, 1);
    const double n = std::sqrt(eye[0] * eye[0] + eye[1] * eye[1] + eye[2] * eye[2]);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.direction[c], -eye[c] / n, 1e-12);
  }
}

TEST(Rays, PlanePointOfCentrePixelIsTranslation) {
  const auto q = plane_point(translation_pose({0.2, -0.1, 0}), {4.0, 1.5, 1.5}, 4, 4, {1, 1});
  // (1 − 1.5)/4 = −0.125 in x; −(1 − 1.5)/4 = 0.125 in y.
  EXPECT_NEAR(q[0], 0.2 - 0.125, 1e-15);
  EXPECT_NEAR(q[1], -0.1 + 0.125, 1e-15);
}

TEST(Sampling, StratifiedMidpoints) {
  Ray r;
  r.near = 0.0;
  r.far = 4.0;
  const auto t = stratified_samples(r, 4, nullptr);
  ASSERT_EQ(t.size(), 4u);
  EXPECT_DOUBLE_EQ(t[0], 0.5);
  EXPECT_DOUBLE_EQ(t[1], 1.5);
  EXPECT_DOUBLE_EQ(t[2], 2.5);
  EXPECT_DOUBLE_EQ(t[3], 3.5);
}

TEST(Sampling, StratifiedOneSamplePerBinUniformWithin) {
  Ray r;
  r.near = 1.0;
  r.far = 3.0;
  Rng rng(9);
  const std::size_t n = 8, cells = 10, reps = 2000;
  std::vector<double> counts(cells, 0.0);
  for (std::size_t rep = 0; rep < reps; ++rep) {
    const auto t = stratified_samples(r, n, &rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double lo = 1.0 + 2.0 * i / n, hi = 1.0 + 2.0 * (i + 1) / n;
      ASSERT_GE(t[i], lo);
      ASSERT_LT(t[i], hi);
      const double frac = (t[i] - lo) / (hi - lo);
      counts[std::min(cells - 1, static_cast<std::size_t>(frac * cells))] += 1;
    }
  }
  const double expected = static_cast<double>(n * reps) / cells;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 27.88);  // χ²(9) at p = 0.001
}

CompositeOptions opts(double last_delta, double background) {
  CompositeOptions o;
  o.last_delta = last_delta;
  o.background = background;
  return o;
}

TEST(Composite, EmptyMediumShowsBackground) {
  const std::vector<double> sig{0, 0, 0}, col{1, 0, 0, 0, 1, 0, 0, 0, 1}, t{1, 2, 3};
  const auto c = composite(sig, col, t, opts(0.1, 1.0));
  for (double x : c.rgb) EXPECT_DOUBLE_EQ(x, 1.0);
  for (double w : c.weights) EXPECT_EQ(w, 0.0);
  EXPECT_EQ(c.opacity, 0.0);
}

TEST(Composite, HalfAbsorbingSamplesOnBlack) {
  const double ln2 = std::numbers::ln2;
  const std::vector<double> sig{ln2, ln2}, col{1, 1, 1, 1, 1, 1}, t{0, 1};
  const auto c = composite(sig, col, t, opts(1.0, 0.0));
  EXPECT_NEAR(c.weights[0], 0.5, 1e-15);
  EXPECT_NEAR(c.weights[1], 0.25, 1e-15);
  EXPECT_NEAR(c.opacity, 0.75, 1e-15);
  for (double x : c.rgb) EXPECT_NEAR(x, 0.75, 1e-15);
}

TEST(Composite, OpaqueFirstSampleWins) {
  const std::vector<double> sig{1e6, 1e6}, col{0.2, 0.4, 0.6, 1, 1, 1}, t{0.5, 0.6};
  const auto c = composite(sig, col, t, opts(0.1, 1.0));
  EXPECT_NEAR(c.rgb[0], 0.2, 1e-12);
  EXPECT_NEAR(c.rgb[1], 0.4, 1e-12);
  EXPECT_NEAR(c.rgb[2], 0.6, 1e-12);
  EXPECT_NEAR(c.weights[0], 1.0, 1e-12);
}

TEST(Composite, WeightInvariants) {
  Rng rng(4);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.below(20);
    std::vector<double> sig(n), col(3 * n), t(n);
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sig[i] = rng.uniform(0, 5);
      d += rng.uniform(0.01, 0.3);
      t[i] = d;
    }
    for (double& c : col) c = rng.uniform();
    const auto c = composite(sig, col, t, opts(0.1, rng.uniform()));
    double sum = 0.0;
    for (double w : c.weights) {
      EXPECT_GE(w, 0.0);
      sum += w;
    }
    EXPECT_LE(sum, 1.0 + 1e-12);
    EXPECT_NEAR(sum, c.opacity, 1e-12);
    for (double x : c.rgb) {
      EXPECT_GE(x, -1e-12);
      EXPECT_LE(x, 1.0 + 1e-12);
    }
  }
}

TEST(Composite, OpacityOfConstantMediumIsClosedForm) {
  const std::vector<double> sig(10, 0.7), col(30, 0.4), t{0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7, 1.9};
  const auto c = composite(sig, col, t, opts(0.2, 1.0));
  // Nine gaps of 0.2 plus the final δ of 0.2.
  EXPECT_NEAR(c.opacity, 1.0 - std::exp(-0.7 * 2.0), 1e-12);
  const std::vector<double> thick(10, 500.0);
  for (double x : composite(thick, col, t, opts(0.2, 1.0)).rgb) EXPECT_NEAR(x, 0.4, 1e-3);
}

TEST(Composite, BackwardMatchesFiniteDifferences) {
  Rng rng(8);
  const std::size_t n = 6;
  std::vector<double> sig(n), col(3 * n), t(n);
  for (std::size_t i = 0; i < n; ++i) {
    sig[i] = rng.uniform(0, 3);
    t[i] = 0.2 * (i + 1);
  }
  for (double& c : col) c = rng.uniform();
  const Vec3 drgb{0.3, -0.7, 1.1};
  const CompositeOptions o = opts(0.1, 0.8);
  std::vector<double> ds(n), dc(3 * n);
  composite_backward(sig, col, t, o, drgb, ds, dc);
  auto objective = [&] {
    const auto c = composite(sig, col, t, o);
    return drgb[0] * c.rgb[0] + drgb[1] * c.rgb[1] + drgb[2] * c.rgb[2];
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < n; ++i) {
    const double s0 = sig[i];
    sig[i] = s0 + h;
    const double up = objective();
    sig[i] = s0 - h;
    const double down = objective();
    sig[i] = s0;
    EXPECT_NEAR((up - down) / (2 * h), ds[i], 1e-7);
  }
  for (std::size_t i = 0; i < 3 * n; ++i) {
    const double c0 = col[i];
    col[i] = c0 + h;
    const double up = objective();
    col[i] = c0 - h;
    const double down = objective();
    col[i] = c0;
    EXPECT_NEAR((up - down) / (2 * h), dc[i], 1e-7);
  }
}

TEST(Hierarchical, OccupancyFollowsWeights) {
  const std::vector<double> w{3, 1}, edges{0, 1, 2};
  const auto t = hierarchical_samples(w, edges, 400, nullptr, 0.0);
  std::size_t first = 0;
  for (double x : t) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 2.0);
    if (x < 1.0) ++first;
  }
  EXPECT_EQ(first, 300u);
  EXPECT_TRUE(std::is_sorted(t.begin(), t.end()));
}

TEST(Hierarchical, RandomOccupancyFollowsWeights) {
  const std::vector<double> w{3, 1}, edges{0, 1, 2};
  Rng rng(2);
  std::size_t first = 0, total = 0;
  for (int rep = 0; rep < 100; ++rep) {
    for (double x : hierarchical_samples(w, edges, 64, &rng, 0.0)) {
      first += x < 1.0;
      ++total;
    }
  }
  EXPECT_NEAR(static_cast<double>(first) / total, 0.75, 0.02);
}

TEST(Hierarchical, SingleBinStaysInside) {
  const std::vector<double> w{0.7}, edges{2.0, 3.0};
  Rng rng(1);
  for (double x : hierarchical_samples(w, edges, 50, &rng)) {
    EXPECT_GE(x, 2.0);
    EXPECT_LE(x, 3.0);
  }
}

TEST(Hierarchical, ZeroWeightsFallBackToUniform) {
  const std::vector<double> w{0, 0, 0, 0}, edges{0, 1, 2, 3, 4};
  const auto t = hierarchical_samples(w, edges, 8, nullptr);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(t[i], 0.25 + 0.5 * i, 1e-9);
}

ViewGeometry square_view(std::size_t w, double focal_per_width) {
  ViewGeometry v;
  v.pose = look_at({0, -2.5, 0.3}, {0, 0, 0}, {0, 0, 1});
  v.width = w;
  v.height = w;
  v.intrinsics = {focal_per_width * static_cast<double>(w), (w - 1) / 2.0, (w - 1) / 2.0};
  return v;
}

TEST(Render, ZeroImageNetworkIsGrey) {
  const NetworkParams z = zero_network(NetArch::desk_image());
  const Image img = render_image(Mlp::dense(z), square_view(6, 1.0), RenderConfig{}, Task::image2d);
  for (double x : img.rgb) EXPECT_DOUBLE_EQ(x, 0.5);
}

TEST(Render, ReferenceMatchesAnalyticField) {
  const SceneSpec spec = SceneSpec::default_scene();
  RenderConfig cfg;
  cfg.n_coarse = 48;
  const ViewGeometry v = square_view(12, 1.1);
  const Image a = render_reference(spec, v, cfg, Task::nerf3d);
  AnalyticField field(spec);
  const Image b = render_image(field, nullptr, v, cfg, Task::nerf3d);
  EXPECT_EQ(a.rgb, b.rgb);
}

TEST(Render, CentrePixelIndependentOfResolution) {
  const SceneSpec spec = SceneSpec::default_scene();
  RenderConfig cfg;
  cfg.n_coarse = 64;
  const Image small = render_reference(spec, square_view(9, 1.1), cfg, Task::nerf3d);
  const Image large = render_reference(spec, square_view(17, 1.1), cfg, Task::nerf3d);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(small.at(4, 4, c), large.at(8, 8, c), 1e-12);
}

TEST(Render, AnalyticSphereShowsItsColour) {
  SceneSpec spec;
  spec.spheres.push_back({{0, 0, 0}, 0.6, {0.1, 0.8, 0.3}});
  spec.density = 1e4;
  RenderConfig cfg;
  cfg.n_coarse = 128;
  const Image img = render_reference(spec, square_view(9, 1.1), cfg, Task::nerf3d);
  EXPECT_NEAR(img.at(4, 4, 0), 0.1, 1e-6);
  EXPECT_NEAR(img.at(4, 4, 1), 0.8, 1e-6);
  EXPECT_NEAR(img.at(0, 0, 0), 1.0, 1e-12);  // corner ray misses: white background
}

ClientDataset fitting_dataset(std::size_t side) {
  ClientDataset d;
  PosedImage img;
  img.name = "target";
  img.pixels = Image(side, side);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      img.pixels.at(x, y, 0) = x < side / 2 ? 0.9 : 0.1;
      img.pixels.at(x, y, 1) = y < side / 2 ? 0.8 : 0.2;
      img.pixels.at(x, y, 2) = 0.5;
    }
  img.intrinsics = {side / 1.2, (side - 1) / 2.0, (side - 1) / 2.0};
  d.images.push_back(img);
  return d;
}

TrainConfig image_config() {
  TrainConfig cfg;
  cfg.task = Task::image2d;
  cfg.batch_size = 64;
  cfg.adam.lr = 5e-3;
  return cfg;
}

TEST(Train, ZeroIterationsIsNoOp) {
  NetworkParams p = init_network(NetArch::desk_image(), 1);
  const NetworkParams before = p;
  const ClientDataset d = fitting_dataset(8);
  train(p, std::span<const ClientDataset>(&d, 1), 0, 1, image_config());
  EXPECT_EQ(p, before);
}

TEST(Train, DeterministicInSeed) {
  const ClientDataset d = fitting_dataset(8);
  NetworkParams a = init_network(NetArch::desk_image(), 1), b = a, c = a;
  train(a, std::span<const ClientDataset>(&d, 1), 20, 5, image_config());
  train(b, std::span<const ClientDataset>(&d, 1), 20, 5, image_config());
  train(c, std::span<const ClientDataset>(&d, 1), 20, 6, image_config());
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

double image_mse(const NetworkParams& p, const PosedImage& target) {
  const Image r = render_image(Mlp::dense(p), geometry_of(target), RenderConfig{}, Task::image2d);
  double s = 0.0;
  for (std::size_t i = 0; i < r.rgb.size(); ++i) s += (r.rgb[i] - target.pixels.rgb[i]) * (r.rgb[i] - target.pixels.rgb[i]);
  return s / r.rgb.size();
}

TEST(Train, ImageFitHalvesError) {
  const ClientDataset d = fitting_dataset(16);
  NetworkParams p = init_network(NetArch::desk_image(), 2);
  const double before = image_mse(p, d.images[0]);
  TrainLog log;
  train(p, std::span<const ClientDataset>(&d, 1), 300, 3, image_config(), nullptr, &log);
  EXPECT_EQ(log.losses.size(), 300u);
  EXPECT_LE(image_mse(p, d.images[0]), 0.5 * before);
}

TEST(Train, RadianceFitReducesError) {
  SceneSpec spec;
  spec.spheres.push_back({{0, 0, 0}, 0.6, {0.9, 0.2, 0.2}});
  GenerateOptions g;
  g.task = Task::nerf3d;
  g.n_train = 10;
  g.n_val = 1;
  g.width = g.height = 12;
  g.clients = 1;
  g.render.n_coarse = 32;
  const SceneSplit split = generate_synthetic_scene(spec, g);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.adam.lr = 2e-3;
  cfg.render.n_coarse = 16;
  NetworkParams p = init_network(NetArch::desk(), 1);
  TrainLog log;
  train(p, split.clients, 200, 1, cfg, nullptr, &log);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 20; ++i) {
    head += log.losses[i];
    tail += log.losses[log.losses.size() - 1 - i];
  }
  EXPECT_LT(tail, 0.5 * head);
}

TEST(Train, TaskMismatchThrows) {
  NetworkParams p = init_network(NetArch::desk(), 1);
  const ClientDataset d = fitting_dataset(4);
  EXPECT_THROW(train(p, std::span<const ClientDataset>(&d, 1), 1, 1, image_config()), std::invalid_argument);
}

}  // namespace
}  // namespace fednerf
