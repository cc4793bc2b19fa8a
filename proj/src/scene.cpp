#include "fednerf/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "fednerf/image_io.hpp"

namespace fednerf {

SceneSpec SceneSpec::default_scene() {
  SceneSpec s;
  s.spheres.push_back({{0.0, 0.0, 0.0}, 0.55, {0.85, 0.25, 0.2}});
  s.spheres.push_back({{0.55, 0.45, 0.35}, 0.3, {0.2, 0.4, 0.9}});
  s.boxes.push_back({{-0.9, -0.85, -0.6}, {-0.2, -0.35, 0.6}, {0.2, 0.75, 0.3}});
  s.boxes.push_back({{0.1, -0.9, -0.4}, {0.8, -0.5, 0.1}, {0.95, 0.8, 0.2}});
  s.density = 40.0;
  s.softness = 0.05;
  s.background = {0.92, 0.92, 0.88};
  return s;
}

SceneSpec SceneSpec::parse(const std::string& text) {
  SceneSpec s;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    auto fail = [&]() {
      throw std::invalid_argument("scene spec line " + std::to_string(lineno) + ": malformed '" + kind + "' entry");
    };
    if (kind == "sphere") {
      Sphere sp;
      if (!(ls >> sp.center[0] >> sp.center[1] >> sp.center[2] >> sp.radius >> sp.color[0] >> sp.color[1] >>
            sp.color[2]) || sp.radius <= 0.0) {
        fail();
      }
      s.spheres.push_back(sp);
    } else if (kind == "box") {
      Box b;
      if (!(ls >> b.lo[0] >> b.lo[1] >> b.lo[2] >> b.hi[0] >> b.hi[1] >> b.hi[2] >> b.color[0] >> b.color[1] >>
            b.color[2])) {
        fail();
      }
      s.boxes.push_back(b);
    } else if (kind == "density") {
      if (!(ls >> s.density) || s.density < 0.0) fail();
    } else if (kind == "softness") {
      if (!(ls >> s.softness) || s.softness < 0.0) fail();
    } else if (kind == "background") {
      if (!(ls >> s.background[0] >> s.background[1] >> s.background[2])) fail();
    } else {
      throw std::invalid_argument("scene spec line " + std::to_string(lineno) + ": unknown entry '" + kind + "'");
    }
  }
  return s;
}

SceneSpec SceneSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string SceneSpec::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "density " << density << "\nsoftness " << softness << "\nbackground " << background[0] << ' '
      << background[1] << ' ' << background[2] << '\n';
  for (const auto& sp : spheres) {
    out << "sphere " << sp.center[0] << ' ' << sp.center[1] << ' ' << sp.center[2] << ' ' << sp.radius << ' '
        << sp.color[0] << ' ' << sp.color[1] << ' ' << sp.color[2] << '\n';
  }
  for (const auto& b : boxes) {
    out << "box " << b.lo[0] << ' ' << b.lo[1] << ' ' << b.lo[2] << ' ' << b.hi[0] << ' ' << b.hi[1] << ' '
        << b.hi[2] << ' ' << b.color[0] << ' ' << b.color[1] << ' ' << b.color[2] << '\n';
  }
  return out.str();
}

void AnalyticField::query(const Matrix& positions, const Matrix*, std::vector<double>& sigma, Matrix& rgb) const {
  const std::size_t n = positions.rows();
  sigma.assign(n, 0.0);
  rgb = Matrix(n, 3);
  for (std::size_t p = 0; p < n; ++p) {
    const double x = positions(p, 0), y = positions(p, 1), z = positions(p, 2);
    const Vec3* color = nullptr;
    for (const auto& s : spec_.spheres) {
      const double dx = x - s.center[0], dy = y - s.center[1], dz = z - s.center[2];
      if (dx * dx + dy * dy + dz * dz <= s.radius * s.radius) {
        color = &s.color;
        break;
      }
    }
    if (!color) {
      for (const auto& b : spec_.boxes) {
        if (x >= b.lo[0] && x <= b.hi[0] && y >= b.lo[1] && y <= b.hi[1] && z >= b.lo[2] && z <= b.hi[2]) {
          color = &b.color;
          break;
        }
      }
    }
    if (color) {
      sigma[p] = spec_.density;
      for (std::size_t c = 0; c < 3; ++c) rgb(p, c) = (*color)[c];
    }
  }
}

namespace {

double coverage(double signed_distance, double softness) {
  if (softness <= 0.0) return signed_distance <= 0.0 ? 1.0 : 0.0;
  return std::clamp(0.5 - signed_distance / softness, 0.0, 1.0);
}

}  // namespace

void PlanarField::query(const Matrix& positions, const Matrix*, std::vector<double>& sigma, Matrix& rgb) const {
  const std::size_t n = positions.rows();
  sigma.assign(n, 0.0);
  rgb = Matrix(n, 3);
  for (std::size_t p = 0; p < n; ++p) {
    const double x = positions(p, 0), y = positions(p, 1);
    Vec3 c = spec_.background;
    auto paint = [&](const Vec3& color, double a) {
      for (std::size_t k = 0; k < 3; ++k) c[k] = (1.0 - a) * c[k] + a * color[k];
    };
    for (const auto& b : spec_.boxes) {
      const double hx = 0.5 * (b.hi[0] - b.lo[0]), hy = 0.5 * (b.hi[1] - b.lo[1]);
      const double d = std::max(std::fabs(x - 0.5 * (b.lo[0] + b.hi[0])) - hx, std::fabs(y - 0.5 * (b.lo[1] + b.hi[1])) - hy);
      paint(b.color, coverage(d, spec_.softness));
    }
    for (const auto& s : spec_.spheres) {
      const double d = std::hypot(x - s.center[0], y - s.center[1]) - s.radius;
      paint(s.color, coverage(d, spec_.softness));
    }
    for (std::size_t k = 0; k < 3; ++k) rgb(p, k) = c[k];
  }
}

std::vector<ClientDataset> split_round_robin(std::vector<PosedImage> views, std::size_t clients) {
  if (clients == 0) throw std::invalid_argument("split_round_robin: need at least one client");
  std::vector<ClientDataset> out(clients);
  for (std::size_t k = 0; k < clients; ++k) out[k].id = k;
  for (std::size_t i = 0; i < views.size(); ++i) out[i % clients].images.push_back(std::move(views[i]));
  return out;
}

Image render_reference(const SceneSpec& spec, const ViewGeometry& view, const RenderConfig& cfg, Task task) {
  if (task == Task::nerf3d) {
    AnalyticField field(spec);
    return render_image(field, nullptr, view, cfg, task, nullptr);
  }
  PlanarField field(spec);
  return render_image(field, nullptr, view, cfg, task, nullptr);
}

namespace {

Pose plane_pose(double angle, double tx, double ty) {
  Pose p;
  const double c = std::cos(angle), s = std::sin(angle);
  p.m = {c, -s, 0, tx, s, c, 0, ty, 0, 0, 1, 0};
  return p;
}

ViewGeometry make_view(const GenerateOptions& opts, Rng& rng, std::size_t index, bool lattice) {
  ViewGeometry v;
  v.width = opts.width;
  v.height = opts.height;
  const double w = static_cast<double>(opts.width);
  const double h = static_cast<double>(opts.height);
  if (opts.task == Task::nerf3d) {
    Vec3 dir;
    if (lattice) {
      // Fibonacci lattice with a small seeded jitter.
      const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
      const double n = static_cast<double>(opts.n_train);
      const double z = 1.0 - 2.0 * (static_cast<double>(index) + 0.5) / n;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden * static_cast<double>(index) + rng.uniform(-0.05, 0.05);
      dir = {r * std::cos(phi), r * std::sin(phi), z};
    } else {
      const double z = rng.uniform(-1.0, 1.0);
      const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      dir = {r * std::cos(phi), r * std::sin(phi), z};
    }
    const Vec3 eye{opts.camera_radius * dir[0], opts.camera_radius * dir[1], opts.camera_radius * dir[2]};
    v.pose = look_at(eye, {0, 0, 0}, {0, 0, 1});
    v.intrinsics = {1.1 * w, w / 2.0, h / 2.0};
  } else {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double tx = rng.uniform(-0.35, 0.35);
    const double ty = rng.uniform(-0.35, 0.35);
    v.pose = plane_pose(angle, tx, ty);
    v.intrinsics = {w / 1.2, w / 2.0, h / 2.0};
  }
  return v;
}

PosedImage make_image(const SceneSpec& spec, const GenerateOptions& opts, const ViewGeometry& view, std::string name) {
  PosedImage img;
  img.name = std::move(name);
  img.pose = view.pose;
  img.intrinsics = view.intrinsics;
  img.pixels = quantize8(render_reference(spec, view, opts.render, opts.task));
  img.stored_bytes = encode_ppm(img.pixels).size();
  return img;
}

std::string view_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03zu.ppm", prefix, i);
  return buf;
}

}  // namespace

SceneSplit generate_synthetic_scene(const SceneSpec& spec, const GenerateOptions& opts) {
  if (opts.width == 0 || opts.height == 0) throw std::invalid_argument("generate: image size must be positive");
  if (!(opts.pretrain_fraction >= 0.0 && opts.pretrain_fraction < 1.0)) {
    throw std::invalid_argument("generate: pretrain_fraction must be in [0, 1)");
  }
  Rng train_rng(derive_seed(opts.seed, 1));
  Rng val_rng(derive_seed(opts.seed, 2));
  Rng split_rng(derive_seed(opts.seed, 3));

  std::vector<PosedImage> train;
  for (std::size_t i = 0; i < opts.n_train; ++i) {
    train.push_back(make_image(spec, opts, make_view(opts, train_rng, i, true), view_name("train", i)));
  }
  SceneSplit split;
  for (std::size_t i = 0; i < opts.n_val; ++i) {
    split.validation.push_back(make_image(spec, opts, make_view(opts, val_rng, i, false), view_name("val", i)));
  }

  const auto n_pre = static_cast<std::size_t>(std::llround(opts.pretrain_fraction * static_cast<double>(opts.n_train)));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < n_pre; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(split_rng.below(order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<bool> is_pre(train.size(), false);
  for (std::size_t i = 0; i < n_pre; ++i) is_pre[order[i]] = true;

  std::vector<PosedImage> rest;
  split.pretrain.id = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (is_pre[i]) split.pretrain.images.push_back(std::move(train[i]));
    else rest.push_back(std::move(train[i]));
  }
  split.clients = split_round_robin(std::move(rest), opts.clients);
  return split;
}

}  // namespace fednerf
