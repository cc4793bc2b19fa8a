#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include <unistd.h>

#include "fednerf/image_io.hpp"
#include "fednerf/scene.hpp"

namespace fednerf {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fednerf_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

GenerateOptions small_options(Task task) {
  GenerateOptions g;
  g.task = task;
  g.n_train = 125;
  g.n_val = 3;
  g.width = g.height = 8;
  g.clients = 4;
  g.render.n_coarse = 16;
  g.seed = 3;
  return g;
}

ViewGeometry front_view(std::size_t w) {
  ViewGeometry v;
  v.width = v.height = w;
  v.intrinsics = {w / 1.2, w / 2.0, w / 2.0};
  return v;
}

TEST(Scene, EmptySpecRendersBackground) {
  SceneSpec spec;
  spec.background = {0.1, 0.2, 0.3};
  const Image planar = render_reference(spec, front_view(6), RenderConfig{}, Task::image2d);
  for (std::size_t i = 0; i < planar.pixel_count(); ++i) {
    EXPECT_DOUBLE_EQ(planar.rgb[3 * i], 0.1);
    EXPECT_DOUBLE_EQ(planar.rgb[3 * i + 2], 0.3);
  }
  ViewGeometry v = front_view(6);
  v.pose = look_at({0, 0, 2.5}, {0, 0, 0}, {0, 1, 0});
  const Image volume = render_reference(spec, v, RenderConfig{}, Task::nerf3d);
  for (double x : volume.rgb) EXPECT_DOUBLE_EQ(x, 1.0);
}

TEST(Scene, CentredDiscShowsItsColour) {
  SceneSpec spec;
  spec.spheres.push_back({{0, 0, 0}, 0.3, {0.7, 0.1, 0.4}});
  const Image img = render_reference(spec, front_view(8), RenderConfig{}, Task::image2d);
  EXPECT_DOUBLE_EQ(img.at(4, 4, 0), 0.7);
  EXPECT_DOUBLE_EQ(img.at(4, 4, 1), 0.1);
  EXPECT_DOUBLE_EQ(img.at(0, 0, 0), 1.0);
}

TEST(Scene, SoftEdgeIsHalfCoveredOnBoundary) {
  SceneSpec spec;
  spec.spheres.push_back({{0, 0, 0}, 0.5, {0, 0, 0}});
  spec.softness = 0.1;
  Matrix pos(1, 2, {0.5, 0.0});
  std::vector<double> sigma;
  Matrix rgb;
  PlanarField(spec).query(pos, nullptr, sigma, rgb);
  EXPECT_NEAR(rgb(0, 0), 0.5, 1e-12);
}

TEST(Scene, DefaultSplitSizes) {
  const SceneSplit s = generate_synthetic_scene(SceneSpec::default_scene(), small_options(Task::image2d));
  EXPECT_EQ(s.pretrain.images.size(), 25u);
  ASSERT_EQ(s.clients.size(), 4u);
  std::set<std::string> names;
  for (const auto& img : s.pretrain.images) names.insert(img.name);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(s.clients[k].id, k);
    EXPECT_EQ(s.clients[k].images.size(), 25u);
    for (const auto& img : s.clients[k].images) names.insert(img.name);
  }
  EXPECT_EQ(names.size(), 125u);  // disjoint and complete
  EXPECT_EQ(s.validation.size(), 3u);
}

TEST(Scene, GenerationIsDeterministic) {
  const auto opts = small_options(Task::nerf3d);
  const SceneSplit a = generate_synthetic_scene(SceneSpec::default_scene(), opts);
  const SceneSplit b = generate_synthetic_scene(SceneSpec::default_scene(), opts);
  ASSERT_EQ(a.clients[2].images.size(), b.clients[2].images.size());
  for (std::size_t i = 0; i < a.clients[2].images.size(); ++i) {
    EXPECT_EQ(a.clients[2].images[i].pixels.rgb, b.clients[2].images[i].pixels.rgb);
    EXPECT_EQ(a.clients[2].images[i].pose.m, b.clients[2].images[i].pose.m);
  }
  for (const auto& img : a.clients[0].images) {
    EXPECT_LE(img.pose.orthonormality_error(), 1e-12);
    EXPECT_EQ(img.stored_bytes, encode_ppm(img.pixels).size());
  }
}

TEST(Scene, RoundRobinAssignment) {
  std::vector<PosedImage> views(7);
  for (std::size_t i = 0; i < 7; ++i) views[i].name = std::to_string(i);
  const auto parts = split_round_robin(views, 3);
  EXPECT_EQ(parts[0].images.size(), 3u);
  EXPECT_EQ(parts[1].images[1].name, "4");
  EXPECT_EQ(parts[2].images.size(), 2u);
  EXPECT_THROW(split_round_robin(views, 0), std::invalid_argument);
}

TEST(Scene, SpecTextRoundTrip) {
  const SceneSpec a = SceneSpec::default_scene();
  const SceneSpec b = SceneSpec::parse(a.to_text());
  EXPECT_EQ(b.to_text(), a.to_text());
  EXPECT_EQ(b.spheres.size(), 2u);
  EXPECT_EQ(b.boxes.size(), 2u);
}

TEST(Scene, ParseErrorsNameTheLine) {
  try {
    SceneSpec::parse("density 3\nsphere 0 0 0\n");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(SceneSpec::parse("cone 1 2 3"), std::invalid_argument);
  EXPECT_THROW(SceneSpec::parse("sphere 0 0 0 -1 1 1 1"), std::invalid_argument);
  EXPECT_NO_THROW(SceneSpec::parse("# comment only\n\n"));
}

TEST(Ppm, RoundTripOfQuantisedImage) {
  Image img(5, 3);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<double>(i % 256) / 255.0;
  const auto bytes = encode_ppm(img);
  EXPECT_EQ(bytes.size(), std::string("P6\n5 3\n255\n").size() + 45);
  const Image back = decode_ppm(bytes);
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.rgb, img.rgb);
}

TEST(Ppm, QuantiseRoundsToNearestLevel) {
  Image img(1, 1);
  img.rgb = {0.0, 0.5, 1.2};
  const Image q = quantize8(img);
  EXPECT_EQ(q.rgb[0], 0.0);
  EXPECT_DOUBLE_EQ(q.rgb[1], 128.0 / 255.0);
  EXPECT_EQ(q.rgb[2], 1.0);
}

TEST(Ppm, RejectsMalformedInput) {
  const std::string bad = "P5\n1 1\n255\nx";
  EXPECT_THROW(decode_ppm(std::span(reinterpret_cast<const std::uint8_t*>(bad.data()), bad.size())),
               std::runtime_error);
  const std::string truncated = "P6\n2 2\n255\nabc";
  EXPECT_THROW(decode_ppm(std::span(reinterpret_cast<const std::uint8_t*>(truncated.data()), truncated.size())),
               std::runtime_error);
  const std::string commented = "P6\n# note\n1 1\n255\nabc";
  EXPECT_EQ(decode_ppm(std::span(reinterpret_cast<const std::uint8_t*>(commented.data()), commented.size())).width,
            1u);
}

TEST(SceneDirectory, RoundTrip) {
  auto opts = small_options(Task::nerf3d);
  opts.n_train = 10;
  const SceneSplit a = generate_synthetic_scene(SceneSpec::default_scene(), opts);
  const fs::path dir = scratch_dir("scene");
  write_scene(dir, a);
  const SceneSplit b = load_scene(dir);
  ASSERT_EQ(b.pretrain.images.size(), a.pretrain.images.size());
  ASSERT_EQ(b.clients.size(), a.clients.size());
  ASSERT_EQ(b.validation.size(), a.validation.size());
  for (std::size_t k = 0; k < a.clients.size(); ++k) {
    ASSERT_EQ(b.clients[k].images.size(), a.clients[k].images.size());
    EXPECT_EQ(b.clients[k].byte_size(), a.clients[k].byte_size());
    for (std::size_t i = 0; i < a.clients[k].images.size(); ++i) {
      const auto& x = a.clients[k].images[i];
      const auto& y = b.clients[k].images[i];
      EXPECT_EQ(x.name, y.name);
      EXPECT_EQ(x.pixels.rgb, y.pixels.rgb);
      EXPECT_EQ(x.pose.m, y.pose.m);
      EXPECT_EQ(x.intrinsics.focal, y.intrinsics.focal);
      EXPECT_EQ(y.stored_bytes, fs::file_size(dir / "images" / y.name));
    }
  }
  fs::remove_all(dir);
}

TEST(SceneDirectory, MissingDirectoryThrows) {
  EXPECT_THROW(load_scene("/nonexistent/fednerf/scene"), std::runtime_error);
}

}  // namespace
}  // namespace fednerf
