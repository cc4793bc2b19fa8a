#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fednerf/radiance.hpp"

namespace fednerf {

struct Sphere {
  Vec3 center{};
  double radius = 0.5;
  Vec3 color{1, 1, 1};
};

struct Box {
  Vec3 lo{};
  Vec3 hi{};
  Vec3 color{1, 1, 1};
};

/// Analytic scene inside [-1, 1]³ (or [-1, 1]² for image2d, where z is
/// ignored and primitives become discs and rectangles).
struct SceneSpec {
  std::vector<Sphere> spheres;
  std::vector<Box> boxes;
  double density = 40.0;   // σ inside any primitive (nerf3d)
  double softness = 0.0;   // edge ramp width (image2d)
  Vec3 background{1, 1, 1};  // plane colour outside primitives (image2d)

  /// A few overlapping coloured primitives used by the desk presets.
  static SceneSpec default_scene();
  /// Parses the text format written by `to_text`, one primitive per line:
  ///   sphere cx cy cz r  R G B
  ///   box    x0 y0 z0 x1 y1 z1  R G B
  ///   density σ | softness w | background R G B
  static SceneSpec parse(const std::string& text);
  static SceneSpec load(const std::filesystem::path& path);
  std::string to_text() const;
};

/// Constant density inside primitives, zero outside; colour of the first
/// primitive that contains the point.
class AnalyticField final : public RadianceField {
 public:
  explicit AnalyticField(SceneSpec spec) : spec_(std::move(spec)) {}
  void query(const Matrix& positions, const Matrix* directions, std::vector<double>& sigma,
             Matrix& rgb) const override;

 private:
  SceneSpec spec_;
};

/// Planar colour field: primitives painted in order over the background,
/// with a linear edge ramp when softness > 0.
class PlanarField final : public RadianceField {
 public:
  explicit PlanarField(SceneSpec spec) : spec_(std::move(spec)) {}
  void query(const Matrix& positions, const Matrix* directions, std::vector<double>& sigma,
             Matrix& rgb) const override;

 private:
  SceneSpec spec_;
};

struct GenerateOptions {
  Task task = Task::nerf3d;
  std::size_t n_train = 100;
  std::size_t n_val = 8;
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t clients = 4;
  double pretrain_fraction = 0.2;
  double camera_radius = 2.5;
  RenderConfig render;
  std::uint64_t seed = 0;
};

struct SceneSplit {
  ClientDataset pretrain;
  std::vector<ClientDataset> clients;
  std::vector<PosedImage> validation;
};

/// Round-robin assignment: view i goes to client i mod K.
std::vector<ClientDataset> split_round_robin(std::vector<PosedImage> views, std::size_t clients);

/// Unquantised ground-truth render of one view.
Image render_reference(const SceneSpec& spec, const ViewGeometry& view, const RenderConfig& cfg, Task task);

/// Renders training and validation views of `spec`, quantises them to 8 bits,
/// sets stored_bytes to the encoded PPM size, draws a random pretraining
/// subset of pretrain_fraction of the training views, and splits the rest
/// round-robin across clients.
SceneSplit generate_synthetic_scene(const SceneSpec& spec, const GenerateOptions& opts);

}  // namespace fednerf
