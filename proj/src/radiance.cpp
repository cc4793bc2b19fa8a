#include "fednerf/radiance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fednerf {

std::string to_string(Task task) { return task == Task::nerf3d ? "nerf3d" : "image2d"; }

Task parse_task(const std::string& name) {
  if (name == "nerf3d") return Task::nerf3d;
  if (name == "image2d") return Task::image2d;
  throw std::invalid_argument("unknown task '" + name + "' (expected nerf3d or image2d)");
}

double Pose::orthonormality_error() const {
  double worst = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      double dot = 0.0;
      for (std::size_t r = 0; r < 3; ++r) dot += rot(r, a) * rot(r, b);
      worst = std::max(worst, std::fabs(dot - (a == b ? 1.0 : 0.0)));
    }
  }
  return worst;
}

namespace {

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

}  // namespace

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = normalized({target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]});
  Vec3 right = cross(forward, up);
  if (std::sqrt(right[0] * right[0] + right[1] * right[1] + right[2] * right[2]) < 1e-9) {
    right = cross(forward, Vec3{1.0, 0.0, 0.0});
  }
  right = normalized(right);
  const Vec3 cam_up = cross(right, forward);
  Pose p;
  for (std::size_t r = 0; r < 3; ++r) {
    p.m[r * 4 + 0] = right[r];
    p.m[r * 4 + 1] = cam_up[r];
    p.m[r * 4 + 2] = -forward[r];
    p.m[r * 4 + 3] = eye[r];
  }
  return p;
}

std::uint64_t ClientDataset::byte_size() const {
  std::uint64_t total = 0;
  for (const auto& img : images) total += img.stored_bytes;
  return total;
}

Ray generate_ray(const Pose& pose, const Intrinsics& k, std::size_t width, std::size_t height, PixelCoord px,
                 double near, double far) {
  if (px.x >= width || px.y >= height) throw std::out_of_range("generate_ray: pixel outside image");
  const Vec3 cam{(static_cast<double>(px.x) - k.cx) / k.focal, -(static_cast<double>(px.y) - k.cy) / k.focal, -1.0};
  Vec3 world{};
  for (std::size_t r = 0; r < 3; ++r) world[r] = pose.rot(r, 0) * cam[0] + pose.rot(r, 1) * cam[1] + pose.rot(r, 2) * cam[2];
  return Ray{pose.translation(), normalized(world), near, far};
}

Ray generate_ray(const PosedImage& img, PixelCoord px, double near, double far) {
  return generate_ray(img.pose, img.intrinsics, img.pixels.width, img.pixels.height, px, near, far);
}

std::array<double, 2> plane_point(const Pose& pose, const Intrinsics& k, std::size_t width, std::size_t height,
                                  PixelCoord px) {
  if (px.x >= width || px.y >= height) throw std::out_of_range("plane_point: pixel outside image");
  const double u = (static_cast<double>(px.x) - k.cx) / k.focal;
  const double v = -(static_cast<double>(px.y) - k.cy) / k.focal;
  const Vec3 t = pose.translation();
  return {pose.rot(0, 0) * u + pose.rot(0, 1) * v + t[0], pose.rot(1, 0) * u + pose.rot(1, 1) * v + t[1]};
}

std::vector<double> stratified_samples(const Ray& ray, std::size_t n, Rng* rng) {
  if (n == 0) throw std::invalid_argument("stratified_samples: n must be >= 1");
  std::vector<double> t(n);
  const double width = (ray.far - ray.near) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double offset = rng ? rng->uniform() : 0.5;
    t[i] = ray.near + (static_cast<double>(i) + offset) * width;
  }
  return t;
}

namespace {

double delta_at(std::span<const double> depths, std::size_t i, double last_delta) {
  return i + 1 < depths.size() ? depths[i + 1] - depths[i] : last_delta;
}

}  // namespace

CompositeResult composite(std::span<const double> sigmas, std::span<const double> colors,
                          std::span<const double> depths, const CompositeOptions& opts) {
  const std::size_t n = sigmas.size();
  if (colors.size() != 3 * n || depths.size() != n) throw std::invalid_argument("composite: length mismatch");
  CompositeResult out;
  out.weights.resize(n);
  double transmittance = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double tau = sigmas[i] * delta_at(depths, i, opts.last_delta);
    const double keep = std::exp(-tau);
    const double w = transmittance * (1.0 - keep);
    out.weights[i] = w;
    out.opacity += w;
    for (std::size_t c = 0; c < 3; ++c) out.rgb[c] += w * colors[3 * i + c];
    transmittance *= keep;
  }
  for (std::size_t c = 0; c < 3; ++c) out.rgb[c] += opts.background * transmittance;
  return out;
}

void composite_backward(std::span<const double> sigmas, std::span<const double> colors,
                        std::span<const double> depths, const CompositeOptions& opts, const Vec3& drgb,
                        std::span<double> dsigmas, std::span<double> dcolors) {
  const std::size_t n = sigmas.size();
  std::vector<double> t_after(n), weights(n), delta(n);
  double transmittance = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    delta[i] = delta_at(depths, i, opts.last_delta);
    const double keep = std::exp(-sigmas[i] * delta[i]);
    weights[i] = transmittance * (1.0 - keep);
    transmittance *= keep;
    t_after[i] = transmittance;
  }
  const double residual = transmittance;
  // ∂rgb/∂τ_k = c_k T_{k+1} − Σ_{i>k} w_i c_i − background·T_N
  Vec3 suffix{};
  for (std::size_t k = n; k-- > 0;) {
    double g = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d_tau = colors[3 * k + c] * t_after[k] - suffix[c] - opts.background * residual;
      g += drgb[c] * d_tau;
      dcolors[3 * k + c] = drgb[c] * weights[k];
    }
    dsigmas[k] = g * delta[k];
    for (std::size_t c = 0; c < 3; ++c) suffix[c] += weights[k] * colors[3 * k + c];
  }
}

std::vector<double> hierarchical_samples(std::span<const double> weights, std::span<const double> edges,
                                         std::size_t n_fine, Rng* rng, double floor) {
  const std::size_t bins = weights.size();
  if (bins == 0 || edges.size() != bins + 1) throw std::invalid_argument("hierarchical_samples: need bins + 1 edges");
  std::vector<double> pdf(bins);
  double total = 0.0;
  for (std::size_t i = 0; i < bins; ++i) {
    if (!(weights[i] >= 0.0)) throw std::invalid_argument("hierarchical_samples: weights must be >= 0");
    pdf[i] = weights[i] + floor;
    total += pdf[i];
  }
  if (total <= 0.0) {
    std::fill(pdf.begin(), pdf.end(), 1.0);
    total = static_cast<double>(bins);
  }
  std::vector<double> cdf(bins + 1, 0.0);
  for (std::size_t i = 0; i < bins; ++i) {
    pdf[i] /= total;
    cdf[i + 1] = cdf[i] + pdf[i];
  }
  cdf[bins] = 1.0;

  std::vector<double> out(n_fine);
  for (std::size_t j = 0; j < n_fine; ++j) {
    const double u = (static_cast<double>(j) + (rng ? rng->uniform() : 0.5)) / static_cast<double>(n_fine);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t b = static_cast<std::size_t>(std::distance(cdf.begin(), it));
    b = std::clamp<std::size_t>(b, 1, bins) - 1;
    while (b + 1 < bins && pdf[b] == 0.0) ++b;
    const double frac = pdf[b] > 0.0 ? (u - cdf[b]) / pdf[b] : 0.5;
    out[j] = edges[b] + std::clamp(frac, 0.0, 1.0) * (edges[b + 1] - edges[b]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void NetworkField::query(const Matrix& positions, const Matrix* directions, std::vector<double>& sigma,
                         Matrix& rgb) const {
  Mlp::Output out = mlp_.forward(net_, positions, directions, nullptr);
  sigma = std::move(out.sigma);
  rgb = std::move(out.rgb);
}

namespace {

struct SampledRays {
  Matrix positions;   // (B·n)×3
  Matrix directions;  // (B·n)×3
};

SampledRays sample_points(std::span<const Ray> rays, const std::vector<std::vector<double>>& depths) {
  std::size_t total = 0;
  for (const auto& d : depths) total += d.size();
  SampledRays s{Matrix(total, 3), Matrix(total, 3)};
  std::size_t p = 0;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    for (double t : depths[r]) {
      for (std::size_t c = 0; c < 3; ++c) {
        s.positions(p, c) = rays[r].origin[c] + t * rays[r].direction[c];
        s.directions(p, c) = rays[r].direction[c];
      }
      ++p;
    }
  }
  return s;
}

}  // namespace

Matrix render_rays(const RadianceField& coarse, const RadianceField* fine, std::span<const Ray> rays,
                   const RenderConfig& cfg, Rng* rng) {
  const std::size_t nc = cfg.n_coarse;
  std::vector<std::vector<double>> depths(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r) depths[r] = stratified_samples(rays[r], nc, rng);
  SampledRays pts = sample_points(rays, depths);
  std::vector<double> sigma;
  Matrix rgb;
  coarse.query(pts.positions, &pts.directions, sigma, rgb);

  Matrix out(rays.size(), 3);
  std::vector<std::vector<double>> fine_depths;
  const bool use_fine = fine != nullptr && cfg.n_fine > 0;
  if (use_fine) fine_depths.resize(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r) {
    std::span<const double> s(sigma.data() + r * nc, nc);
    std::span<const double> c(rgb.data().data() + r * nc * 3, nc * 3);
    CompositeResult res = composite(s, c, depths[r], cfg.composite);
    for (std::size_t k = 0; k < 3; ++k) out(r, k) = res.rgb[k];
    if (use_fine) {
      std::vector<double> edges(nc + 1);
      for (std::size_t i = 0; i <= nc; ++i) {
        edges[i] = rays[r].near + (rays[r].far - rays[r].near) * static_cast<double>(i) / static_cast<double>(nc);
      }
      auto extra = hierarchical_samples(res.weights, edges, cfg.n_fine, rng);
      auto& merged = fine_depths[r];
      merged.resize(nc + cfg.n_fine);
      std::merge(depths[r].begin(), depths[r].end(), extra.begin(), extra.end(), merged.begin());
    }
  }
  if (!use_fine) return out;

  const std::size_t nf = nc + cfg.n_fine;
  SampledRays fpts = sample_points(rays, fine_depths);
  fine->query(fpts.positions, &fpts.directions, sigma, rgb);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    std::span<const double> s(sigma.data() + r * nf, nf);
    std::span<const double> c(rgb.data().data() + r * nf * 3, nf * 3);
    CompositeResult res = composite(s, c, fine_depths[r], cfg.composite);
    for (std::size_t k = 0; k < 3; ++k) out(r, k) = res.rgb[k];
  }
  return out;
}

Image render_image(const RadianceField& coarse, const RadianceField* fine, const ViewGeometry& view,
                   const RenderConfig& cfg, Task task, Rng* rng) {
  Image img(view.width, view.height);
  constexpr std::size_t kChunk = 1024;
  const std::size_t total = view.width * view.height;
  for (std::size_t start = 0; start < total; start += kChunk) {
    const std::size_t count = std::min(kChunk, total - start);
    Matrix colors;
    if (task == Task::nerf3d) {
      std::vector<Ray> rays;
      rays.reserve(count);
      for (std::size_t i = start; i < start + count; ++i) {
        rays.push_back(generate_ray(view.pose, view.intrinsics, view.width, view.height,
                                    {i % view.width, i / view.width}, cfg.near, cfg.far));
      }
      colors = render_rays(coarse, fine, rays, cfg, rng);
    } else {
      Matrix points(count, 2);
      for (std::size_t i = start; i < start + count; ++i) {
        auto q = plane_point(view.pose, view.intrinsics, view.width, view.height, {i % view.width, i / view.width});
        points(i - start, 0) = q[0];
        points(i - start, 1) = q[1];
      }
      std::vector<double> sigma;
      coarse.query(points, nullptr, sigma, colors);
    }
    std::copy(colors.data().begin(), colors.data().end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(start * 3));
  }
  return img;
}

Image render_image(const Mlp& model, const ViewGeometry& view, const RenderConfig& cfg, Task task) {
  NetworkField coarse(model, 0);
  if (model.arch().use_fine) {
    NetworkField fine(model, 1);
    return render_image(coarse, &fine, view, cfg, task, nullptr);
  }
  return render_image(coarse, nullptr, view, cfg, task, nullptr);
}

ViewGeometry geometry_of(const PosedImage& img) {
  return ViewGeometry{img.pose, img.intrinsics, img.pixels.width, img.pixels.height};
}

}  // namespace fednerf
