#include "fednerf/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fednerf {

namespace {

std::uint8_t to_level(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + img.rgb.size());
  for (double v : img.rgb) out.push_back(to_level(v));
  return out;
}

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos++] - '0');
      ++digits;
    }
    if (digits == 0) throw std::runtime_error("ppm: malformed header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw std::runtime_error("ppm: not a binary P6 file");
  pos = 2;
  const std::size_t w = read_int();
  const std::size_t h = read_int();
  const std::size_t maxval = read_int();
  if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw std::runtime_error("ppm: malformed header");
  ++pos;
  if (bytes.size() - pos < w * h * 3) throw std::runtime_error("ppm: truncated pixel data");
  Image img(w, h);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = bytes[pos + i] / 255.0;
  return img;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_ppm(const std::filesystem::path& path, const Image& img) { write_file(path, encode_ppm(img)); }

Image read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }

Image quantize8(const Image& img) {
  Image out = img;
  for (double& v : out.rgb) v = to_level(v) / 255.0;
  return out;
}

namespace {

void write_views(std::ostream& poses, std::ostream& split_file, const std::filesystem::path& dir,
                 const std::vector<PosedImage>& views, const std::string& label) {
  for (const auto& v : views) {
    write_ppm(dir / "images" / v.name, v.pixels);
    char buf[96];
    poses << v.name;
    for (double x : v.pose.m) {
      std::snprintf(buf, sizeof(buf), " %.17g", x);
      poses << buf;
    }
    std::snprintf(buf, sizeof(buf), " %.17g %.17g %.17g", v.intrinsics.focal, v.intrinsics.cx, v.intrinsics.cy);
    poses << buf << '\n';
    split_file << v.name << ' ' << label << '\n';
  }
}

}  // namespace

void write_scene(const std::filesystem::path& dir, const SceneSplit& split) {
  std::filesystem::create_directories(dir / "images");
  std::ostringstream poses, split_file;
  write_views(poses, split_file, dir, split.pretrain.images, "pretrain");
  for (const auto& c : split.clients) {
    write_views(poses, split_file, dir, c.images, "client " + std::to_string(c.id));
  }
  write_views(poses, split_file, dir, split.validation, "val");
  const std::string p = poses.str(), s = split_file.str();
  write_file(dir / "poses.txt", std::span(reinterpret_cast<const std::uint8_t*>(p.data()), p.size()));
  write_file(dir / "split.txt", std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

SceneSplit load_scene(const std::filesystem::path& dir) {
  struct Entry {
    Pose pose;
    Intrinsics k;
  };
  std::ifstream poses(dir / "poses.txt");
  if (!poses) throw std::runtime_error("cannot open " + (dir / "poses.txt").string());
  std::map<std::string, Entry> entries;
  std::string line;
  while (std::getline(poses, line)) {
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    Entry e;
    for (double& x : e.pose.m) ls >> x;
    ls >> e.k.focal >> e.k.cx >> e.k.cy;
    if (!ls) throw std::runtime_error("poses.txt: malformed entry for " + name);
    entries[name] = e;
  }

  std::ifstream split_file(dir / "split.txt");
  if (!split_file) throw std::runtime_error("cannot open " + (dir / "split.txt").string());
  SceneSplit split;
  while (std::getline(split_file, line)) {
    std::istringstream ls(line);
    std::string name, label;
    if (!(ls >> name >> label)) continue;
    const auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("split.txt: no pose for " + name);
    PosedImage img;
    img.name = name;
    img.pose = it->second.pose;
    img.intrinsics = it->second.k;
    const auto bytes = read_file(dir / "images" / name);
    img.pixels = decode_ppm(bytes);
    img.stored_bytes = bytes.size();
    if (label == "pretrain") {
      split.pretrain.images.push_back(std::move(img));
    } else if (label == "val") {
      split.validation.push_back(std::move(img));
    } else if (label == "client") {
      std::size_t k = 0;
      if (!(ls >> k)) throw std::runtime_error("split.txt: missing client index for " + name);
      if (split.clients.size() <= k) {
        const std::size_t old = split.clients.size();
        split.clients.resize(k + 1);
        for (std::size_t i = old; i <= k; ++i) split.clients[i].id = i;
      }
      split.clients[k].images.push_back(std::move(img));
    } else {
      throw std::runtime_error("split.txt: unknown label '" + label + "'");
    }
  }
  return split;
}

}  // namespace fednerf
