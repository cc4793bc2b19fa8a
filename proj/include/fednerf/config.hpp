#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fednerf/federated.hpp"
#include "fednerf/scene.hpp"

namespace fednerf {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every knob of a run. Text form is one `key = value` per line; `#` starts
/// a comment. See README for the key list.
struct RunConfig {
  Task task = Task::image2d;
  std::string scene;            // scene spec file; empty uses the built-in scene
  std::string arch = "auto";    // auto | desk | desk_image | original; auto picks by task
  bool use_fine = false;

  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t n_train = 100;
  std::size_t n_val = 8;
  double pretrain_fraction = 0.2;

  std::size_t n_coarse = 32;
  std::size_t n_fine = 0;
  double near = 0.5;
  double far = 4.5;
  double last_delta = 0.1;
  std::size_t reference_samples = 128;  // per-ray samples for ground-truth renders

  std::size_t pretrain_iters = 2000;
  std::size_t batch_size = 256;
  double lr = 5e-4;

  double alpha = 0.9;
  std::size_t merges = 20;
  std::size_t iters_per_merge = 100;
  std::size_t clients = 4;
  std::size_t baseline_iters = 0;  // 0 means merges * iters_per_merge

  std::string transport = "inproc";  // inproc | tcp
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;            // 0 picks a free port
  bool deterministic = true;
  bool compress = false;
  std::string weighting = "bytes";   // bytes | images
  bool refactor = false;

  std::string out = "run";
  std::uint64_t seed = 0;

  /// Sets one key; throws ConfigError naming the key on a bad value.
  void set(const std::string& key, const std::string& value);
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  /// Every key with its current value, in a fixed order.
  std::string to_text() const;
  static const std::vector<std::string>& keys();

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  NetArch network() const;
  MergeSchedule schedule() const;
  TrainConfig training() const;
  RenderConfig render() const;
  FedOptions fed_options() const;
  GenerateOptions generate_options() const;
  SceneSpec scene_spec() const;
};

}  // namespace fednerf
