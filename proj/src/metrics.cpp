#include "fednerf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fednerf {

namespace {

void require_same_size(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.rgb.size() != b.rgb.size()) {
    throw std::invalid_argument("image dimensions differ: " + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height));
  }
  if (a.rgb.empty()) throw std::invalid_argument("empty image");
}

std::vector<double> luma(const Image& img) {
  std::vector<double> y(img.pixel_count());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 0.299 * img.rgb[3 * i] + 0.587 * img.rgb[3 * i + 1] + 0.114 * img.rgb[3 * i + 2];
  }
  return y;
}

constexpr std::size_t kWindow = 8;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

double window_ssim(const std::vector<double>& a, const std::vector<double>& b, std::size_t width, std::size_t x0,
                   std::size_t y0, std::size_t w, std::size_t h) {
  const double n = static_cast<double>(w * h);
  double ma = 0.0, mb = 0.0;
  for (std::size_t y = y0; y < y0 + h; ++y)
    for (std::size_t x = x0; x < x0 + w; ++x) {
      ma += a[y * width + x];
      mb += b[y * width + x];
    }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t y = y0; y < y0 + h; ++y)
    for (std::size_t x = x0; x < x0 + w; ++x) {
      const double da = a[y * width + x] - ma;
      const double db = b[y * width + x] - mb;
      va += da * da;
      vb += db * db;
      cov += da * db;
    }
  va /= n;
  vb /= n;
  cov /= n;
  return ((2 * ma * mb + kC1) * (2 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_size(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    s += d * d;
  }
  return s / static_cast<double>(a.rgb.size());
}

double psnr_from_mse(double m) {
  if (m < 0.0 || std::isnan(m)) throw std::invalid_argument("psnr: mse must be >= 0");
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(m));
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

double ssim(const Image& a, const Image& b) {
  require_same_size(a, b);
  const auto ya = luma(a);
  const auto yb = luma(b);
  if (a.width < kWindow || a.height < kWindow) return window_ssim(ya, yb, a.width, 0, 0, a.width, a.height);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + kWindow <= a.height; ++y)
    for (std::size_t x = 0; x + kWindow <= a.width; ++x) {
      total += window_ssim(ya, yb, a.width, x, y, kWindow, kWindow);
      ++count;
    }
  return total / static_cast<double>(count);
}

namespace {

template <typename F>
double mean_of(const std::vector<ViewScore>& v, F f) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (const auto& x : v) s += f(x);
  return s / static_cast<double>(v.size());
}

}  // namespace

double EvalReport::mean_mse() const { return mean_of(views, [](const ViewScore& s) { return s.mse; }); }
double EvalReport::mean_psnr() const { return mean_of(views, [](const ViewScore& s) { return s.psnr; }); }
double EvalReport::mean_ssim() const { return mean_of(views, [](const ViewScore& s) { return s.ssim; }); }

EvalReport evaluate(const NetworkParams& model, std::span<const PosedImage> views, const RenderConfig& cfg, Task task,
                    const std::string& stage) {
  const Mlp mlp = Mlp::dense(model);
  EvalReport r{stage, {}};
  for (const auto& v : views) {
    const Image rendered = render_image(mlp, geometry_of(v), cfg, task);
    const double m = mse(rendered, v.pixels);
    r.views.push_back({v.name, m, psnr_from_mse(m), ssim(rendered, v.pixels)});
  }
  return r;
}

std::string emit_csv(std::span<const EvalReport> reports) {
  std::ostringstream out;
  out << "# LPIPS not computed; SSIM uses 8x8 uniform windows on luma\n";
  out << "stage,view,mse,psnr,ssim\n";
  char buf[128];
  for (const auto& r : reports) {
    for (const auto& v : r.views) {
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g", v.mse, v.psnr, v.ssim);
      out << r.stage << ',' << v.view << ',' << buf << '\n';
    }
  }
  return out.str();
}

void write_csv(const std::filesystem::path& path, std::span<const EvalReport> reports) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << emit_csv(reports);
}

std::vector<EvalReport> parse_csv(const std::string& text) {
  std::vector<EvalReport> reports;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "stage,view,mse,psnr,ssim") throw std::invalid_argument("csv: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cols.push_back(cell);
    if (cols.size() != 5) throw std::invalid_argument("csv: expected 5 columns in '" + line + "'");
    ViewScore s{cols[1], std::stod(cols[2]), std::stod(cols[3]), std::stod(cols[4])};
    if (reports.empty() || reports.back().stage != cols[0]) {
      EvalReport* found = nullptr;
      for (auto& r : reports)
        if (r.stage == cols[0]) found = &r;
      if (found) {
        found->views.push_back(s);
        continue;
      }
      reports.push_back({cols[0], {}});
    }
    reports.back().views.push_back(s);
  }
  if (!header) throw std::invalid_argument("csv: missing header");
  return reports;
}

}  // namespace fednerf
