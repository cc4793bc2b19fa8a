#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fednerf/linalg.hpp"
#include "fednerf/net.hpp"
#include "fednerf/rng.hpp"

namespace fednerf {

using Vec3 = std::array<double, 3>;

/// nerf3d renders rays through a radiance field; image2d regresses pixel
/// colours directly from encoded 2D plane coordinates.
enum class Task : std::uint8_t { nerf3d = 0, image2d = 1 };

std::string to_string(Task task);
Task parse_task(const std::string& name);

/// Interleaved rgb, row-major, values in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), rgb(w * h * 3, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
  std::size_t pixel_count() const { return width * height; }
};

struct Intrinsics {
  double focal = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// 3×4 camera-to-world matrix, row-major [R | t].
struct Pose {
  std::array<double, 12> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};

  double rot(std::size_t r, std::size_t c) const { return m[r * 4 + c]; }
  Vec3 translation() const { return {m[3], m[7], m[11]}; }
  /// Max deviation of RᵀR from identity.
  double orthonormality_error() const;
};

/// Camera looking at `target` from `eye` with the given world up vector.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

struct PosedImage {
  std::string name;
  Image pixels;
  Pose pose;
  Intrinsics intrinsics;
  std::uint64_t stored_bytes = 0;  // size of the encoded file on disk
};

struct ClientDataset {
  std::size_t id = 0;
  std::vector<PosedImage> images;

  /// |D_k|: sum of stored file sizes in bytes.
  std::uint64_t byte_size() const;
};

struct Ray {
  Vec3 origin{};
  Vec3 direction{0, 0, -1};
  double near = 0.0;
  double far = 1.0;
};

struct PixelCoord {
  std::size_t x = 0;
  std::size_t y = 0;
};

/// Pinhole ray through integer pixel (x, y): camera-space direction
/// ((x − cx)/f, −(y − cy)/f, −1), rotated to world and normalised.
Ray generate_ray(const Pose& pose, const Intrinsics& k, std::size_t width, std::size_t height, PixelCoord px,
                 double near, double far);
Ray generate_ray(const PosedImage& img, PixelCoord px, double near, double far);

/// Plane coordinate of pixel (x, y) for the image2d task: the xy part of
/// R·((x − cx)/f, −(y − cy)/f, 0) + t.
std::array<double, 2> plane_point(const Pose& pose, const Intrinsics& k, std::size_t width, std::size_t height,
                                  PixelCoord px);

/// One depth per equal-width bin of [near, far]. A null rng places each
/// sample at its bin midpoint.
std::vector<double> stratified_samples(const Ray& ray, std::size_t n, Rng* rng);

struct CompositeOptions {
  double last_delta = 0.1;  // δ for the final sample
  double background = 1.0;  // added colour times residual transmittance (1 = white, 0 = black)
};

struct CompositeResult {
  Vec3 rgb{};
  std::vector<double> weights;
  double opacity = 0.0;  // Σ w_i = 1 − residual transmittance
};

/// Volume-rendering quadrature: α_i = 1 − exp(−σ_i δ_i), T_i = Π_{j<i}(1 − α_j),
/// w_i = T_i α_i, rgb = Σ w_i c_i + background·(1 − Σ w_i).
/// `colors` holds 3 values per sample.
CompositeResult composite(std::span<const double> sigmas, std::span<const double> colors,
                          std::span<const double> depths, const CompositeOptions& opts);

/// Given ∂loss/∂rgb, writes ∂loss/∂σ_i and ∂loss/∂c_i.
void composite_backward(std::span<const double> sigmas, std::span<const double> colors,
                        std::span<const double> depths, const CompositeOptions& opts, const Vec3& drgb,
                        std::span<double> dsigmas, std::span<double> dcolors);

/// Inverse-CDF samples from the piecewise-constant pdf ∝ (w_i + floor) over
/// bins [edges_i, edges_{i+1}). Stratified in CDF space; a null rng uses the
/// midpoint of each CDF stratum. Returned depths are sorted.
std::vector<double> hierarchical_samples(std::span<const double> weights, std::span<const double> edges,
                                         std::size_t n_fine, Rng* rng, double floor = 1e-5);

struct RenderConfig {
  std::size_t n_coarse = 32;
  std::size_t n_fine = 0;
  double near = 0.5;
  double far = 4.5;
  CompositeOptions composite;
};

/// Anything that can be queried for density and colour at a batch of points.
class RadianceField {
 public:
  virtual ~RadianceField() = default;
  /// positions P×dims, directions P×3 (may be null for planar fields).
  virtual void query(const Matrix& positions, const Matrix* directions, std::vector<double>& sigma,
                     Matrix& rgb) const = 0;
};

/// Adapts one sub-network of an Mlp to RadianceField.
class NetworkField final : public RadianceField {
 public:
  NetworkField(const Mlp& mlp, std::size_t net) : mlp_(mlp), net_(net) {}
  void query(const Matrix& positions, const Matrix* directions, std::vector<double>& sigma,
             Matrix& rgb) const override;

 private:
  const Mlp& mlp_;
  std::size_t net_;
};

struct ViewGeometry {
  Pose pose;
  Intrinsics intrinsics;
  std::size_t width = 0;
  std::size_t height = 0;
};

/// Renders the given rays: coarse samples through `coarse`, and when `fine`
/// is non-null and n_fine > 0, hierarchical samples through `fine`.
/// Returns B×3 colours.
Matrix render_rays(const RadianceField& coarse, const RadianceField* fine, std::span<const Ray> rays,
                   const RenderConfig& cfg, Rng* rng);

/// Full image render. nerf3d: per-pixel ray → samples → field → composite.
/// image2d: per-pixel plane point → field colour.
Image render_image(const RadianceField& coarse, const RadianceField* fine, const ViewGeometry& view,
                   const RenderConfig& cfg, Task task, Rng* rng = nullptr);

/// Convenience: render an Mlp (coarse + optional fine) in midpoint mode.
Image render_image(const Mlp& model, const ViewGeometry& view, const RenderConfig& cfg, Task task);

ViewGeometry geometry_of(const PosedImage& img);

}  // namespace fednerf
