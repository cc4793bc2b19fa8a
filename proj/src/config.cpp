#include "fednerf/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace fednerf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("config key '" + key + "': invalid value '" + value + "' (expected " + expected + ")");
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return x;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(x)) bad(key, v, "a finite number");
    return x;
  } catch (const std::logic_error&) {
    bad(key, v, "a number");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad(key, v, "true or false");
}

std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(name) \
  Field { #name, [](RunConfig& c, const std::string& v) { c.name = to_uint(#name, v); }, \
          [](const RunConfig& c) { return std::to_string(c.name); } }
#define DOUBLE_FIELD(name) \
  Field { #name, [](RunConfig& c, const std::string& v) { c.name = to_double(#name, v); }, \
          [](const RunConfig& c) { return fmt_double(c.name); } }
#define BOOL_FIELD(name) \
  Field { #name, [](RunConfig& c, const std::string& v) { c.name = to_bool(#name, v); }, \
          [](const RunConfig& c) { return std::string(c.name ? "true" : "false"); } }
#define STRING_FIELD(name) \
  Field { #name, [](RunConfig& c, const std::string& v) { c.name = v; }, [](const RunConfig& c) { return c.name; } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"task",
            [](RunConfig& c, const std::string& v) {
              try {
                c.task = parse_task(v);
              } catch (const std::invalid_argument&) {
                bad("task", v, "nerf3d or image2d");
              }
            },
            [](const RunConfig& c) { return to_string(c.task); }},
      STRING_FIELD(scene),
      STRING_FIELD(arch),
      BOOL_FIELD(use_fine),
      SIZE_FIELD(width),
      SIZE_FIELD(height),
      SIZE_FIELD(n_train),
      SIZE_FIELD(n_val),
      DOUBLE_FIELD(pretrain_fraction),
      SIZE_FIELD(n_coarse),
      SIZE_FIELD(n_fine),
      DOUBLE_FIELD(near),
      DOUBLE_FIELD(far),
      DOUBLE_FIELD(last_delta),
      SIZE_FIELD(reference_samples),
      SIZE_FIELD(pretrain_iters),
      SIZE_FIELD(batch_size),
      DOUBLE_FIELD(lr),
      DOUBLE_FIELD(alpha),
      SIZE_FIELD(merges),
      SIZE_FIELD(iters_per_merge),
      SIZE_FIELD(clients),
      SIZE_FIELD(baseline_iters),
      STRING_FIELD(transport),
      STRING_FIELD(host),
      Field{"port",
            [](RunConfig& c, const std::string& v) {
              const auto p = to_uint("port", v);
              if (p > 65535) bad("port", v, "a port number");
              c.port = static_cast<std::uint16_t>(p);
            },
            [](const RunConfig& c) { return std::to_string(c.port); }},
      BOOL_FIELD(deterministic),
      BOOL_FIELD(compress),
      STRING_FIELD(weighting),
      BOOL_FIELD(refactor),
      STRING_FIELD(out),
      Field{"seed", [](RunConfig& c, const std::string& v) { c.seed = to_uint("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  try {
    network().validate();
    schedule().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if ((task == Task::image2d) != (network().heads == HeadKind::rgb)) {
    throw ConfigError("arch '" + arch + "' does not fit task " + to_string(task));
  }
  if (width == 0 || height == 0) throw ConfigError("width and height must be positive");
  if (n_train == 0 || n_val == 0) throw ConfigError("n_train and n_val must be positive");
  if (!(pretrain_fraction > 0.0 && pretrain_fraction < 1.0)) {
    throw ConfigError("pretrain_fraction must be in (0, 1)");
  }
  const auto n_pre = static_cast<std::size_t>(std::llround(pretrain_fraction * static_cast<double>(n_train)));
  if (n_pre == 0) throw ConfigError("pretrain_fraction leaves no pretraining views");
  if (n_train - n_pre < clients) throw ConfigError("fewer remaining views than clients");
  if (n_coarse == 0 || reference_samples == 0) throw ConfigError("sample counts must be positive");
  if (use_fine && n_fine == 0) throw ConfigError("use_fine requires n_fine > 0");
  if (!(near >= 0.0 && far > near)) throw ConfigError("need 0 <= near < far");
  if (!(last_delta > 0.0)) throw ConfigError("last_delta must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (transport != "inproc" && transport != "tcp") throw ConfigError("transport must be inproc or tcp");
  if (weighting != "bytes" && weighting != "images") throw ConfigError("weighting must be bytes or images");
  if (out.empty()) throw ConfigError("out must not be empty");
}

NetArch RunConfig::network() const {
  NetArch a;
  if (arch == "auto") {
    a = task == Task::image2d ? NetArch::desk_image() : NetArch::desk();
  } else if (arch == "desk") {
    a = NetArch::desk();
  } else if (arch == "desk_image") {
    a = NetArch::desk_image();
  } else if (arch == "original") {
    a = NetArch::original();
  } else {
    throw ConfigError("unknown arch '" + arch + "' (expected auto, desk, desk_image or original)");
  }
  a.use_fine = use_fine;
  return a;
}

MergeSchedule RunConfig::schedule() const {
  MergeSchedule s;
  s.alpha = alpha;
  s.merges = merges;
  s.iters_per_merge = iters_per_merge;
  s.clients = clients;
  s.baseline_iters = baseline_iters == 0 ? merges * iters_per_merge : baseline_iters;
  s.seed = seed;
  return s;
}

RenderConfig RunConfig::render() const {
  RenderConfig r;
  r.n_coarse = n_coarse;
  r.n_fine = use_fine ? n_fine : 0;
  r.near = near;
  r.far = far;
  r.composite.last_delta = last_delta;
  return r;
}

TrainConfig RunConfig::training() const {
  TrainConfig t;
  t.task = task;
  t.batch_size = batch_size;
  t.render = render();
  t.adam.lr = lr;
  return t;
}

FedOptions RunConfig::fed_options() const {
  FedOptions o;
  o.train = training();
  o.weighting = weighting == "images" ? SizeWeighting::images : SizeWeighting::bytes;
  o.refactor = refactor;
  o.compress = compress;
  o.serial = deterministic;
  return o;
}

GenerateOptions RunConfig::generate_options() const {
  GenerateOptions g;
  g.task = task;
  g.n_train = n_train;
  g.n_val = n_val;
  g.width = width;
  g.height = height;
  g.clients = clients;
  g.pretrain_fraction = pretrain_fraction;
  g.render = render();
  g.render.n_coarse = reference_samples;
  g.render.n_fine = 0;
  g.seed = seed;
  return g;
}

SceneSpec RunConfig::scene_spec() const { return scene.empty() ? SceneSpec::default_scene() : SceneSpec::load(scene); }

}  // namespace fednerf
