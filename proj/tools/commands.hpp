#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fednerf/config.hpp"
#include "fednerf/metrics.hpp"

namespace fednerf::cli {

class MissingFile : public std::runtime_error {
 public:
  explicit MissingFile(const std::filesystem::path& p) : std::runtime_error("missing file: " + p.string()) {}
};

// Exit codes, one per failure class.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitMissingFile = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitDivergence = 4;

/// Files of one run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path scene() const { return root / "scene"; }
  std::filesystem::path init() const { return root / "init.fnrf"; }
  std::filesystem::path base() const { return root / "base.fnrf"; }
  std::filesystem::path fed() const { return root / "fed.fnrf"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path metrics() const { return root / "metrics.csv"; }
  std::filesystem::path config() const { return root / "config.txt"; }
};

void cmd_generate(const RunConfig& cfg);
void cmd_pretrain(const RunConfig& cfg);
void cmd_baseline(const RunConfig& cfg);
/// `external_clients`: wait for `client` processes instead of spawning threads.
void cmd_federated(const RunConfig& cfg, bool external_clients);
void cmd_client(const RunConfig& cfg, std::size_t client);
std::vector<EvalReport> cmd_compare(const RunConfig& cfg, const std::filesystem::path& init,
                                    const std::filesystem::path& base, const std::filesystem::path& fed);
void cmd_render(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::string& view,
                const std::filesystem::path& output);
void cmd_pipeline(const RunConfig& cfg);

/// Parses arguments, dispatches, and maps failures to exit codes.
int run(int argc, char** argv);

}  // namespace fednerf::cli
