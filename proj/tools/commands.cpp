#include "commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <charconv>
#include <fstream>
#include <iostream>
#include <map>

#include "fednerf/federated.hpp"
#include "fednerf/image_io.hpp"
#include "fednerf/log.hpp"
#include "fednerf/transport.hpp"

namespace fednerf::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

RunPaths paths_of(const RunConfig& cfg) { return RunPaths{cfg.out}; }

void require_exists(const fs::path& p) {
  if (!fs::exists(p)) throw MissingFile(p);
}

SceneSplit load_split(const RunPaths& p) {
  require_exists(p.scene() / "split.txt");
  require_exists(p.scene() / "poses.txt");
  return load_scene(p.scene());
}

NetworkParams load_checkpoint(const fs::path& path, const NetArch& arch) {
  require_exists(path);
  return deserialize_dense(read_file(path), arch);
}

void save_checkpoint(const fs::path& path, const NetworkParams& params) { write_file(path, serialize(params)); }

json read_manifest(const RunPaths& p) {
  if (!fs::exists(p.manifest())) return json::object();
  std::ifstream in(p.manifest());
  return json::parse(in);
}

void update_manifest(const RunConfig& cfg, const std::string& section, json value) {
  const RunPaths p = paths_of(cfg);
  json m = read_manifest(p);
  m["config"] = cfg.to_text();
  m[section] = std::move(value);
  fs::create_directories(p.root);
  std::ofstream out(p.manifest());
  out << m.dump(2) << '\n';
}

json ledger_json(const BandwidthLedger& ledger) {
  json records = json::array();
  for (const auto& r : ledger.records()) {
    records.push_back({{"direction", to_string(r.direction)},
                       {"kind", to_string(r.kind)},
                       {"round", r.round},
                       {"client", r.client},
                       {"raw_bytes", r.raw_bytes},
                       {"compressed_bytes", r.compressed_bytes},
                       {"wire_bytes", r.wire_bytes}});
  }
  return {{"total_raw_bytes", ledger.total_raw()},
          {"total_compressed_bytes", ledger.total_compressed()},
          {"total_wire_bytes", ledger.total_wire()},
          {"records", std::move(records)}};
}

json schedule_json(const MergeSchedule& s) {
  return {{"alpha", s.alpha},       {"merges", s.merges},
          {"iters_per_merge", s.iters_per_merge}, {"clients", s.clients},
          {"baseline_iters", s.baseline_iters},   {"seed", s.seed}};
}

std::uint64_t files_on_disk(const RunPaths& p, const std::vector<ClientDataset>& clients) {
  std::uint64_t total = 0;
  for (const auto& c : clients)
    for (const auto& img : c.images) total += fs::file_size(p.scene() / "images" / img.name);
  return total;
}

std::vector<ClientDataset> checked_clients(const RunConfig& cfg, const SceneSplit& split) {
  if (split.clients.size() != cfg.clients) {
    throw ConfigError("scene has " + std::to_string(split.clients.size()) + " client splits but clients = " +
                      std::to_string(cfg.clients) + "; regenerate the scene");
  }
  return split.clients;
}

}  // namespace

void cmd_generate(const RunConfig& cfg) {
  const RunPaths p = paths_of(cfg);
  if (!cfg.scene.empty()) require_exists(cfg.scene);
  const SceneSpec spec = cfg.scene_spec();
  const SceneSplit split = generate_synthetic_scene(spec, cfg.generate_options());
  write_scene(p.scene(), split);
  {
    std::ofstream(p.scene() / "scene.txt") << spec.to_text();
    std::ofstream(p.config()) << cfg.to_text();
  }
  json clients = json::array();
  for (const auto& c : split.clients) {
    clients.push_back({{"client", c.id}, {"images", c.images.size()}, {"bytes", c.byte_size()}});
  }
  update_manifest(cfg, "scene", {{"pretrain_images", split.pretrain.images.size()},
                                 {"validation_images", split.validation.size()},
                                 {"clients", clients}});
  spdlog::info("generated {} pretrain, {} client and {} validation views in {}", split.pretrain.images.size(),
               cfg.n_train - split.pretrain.images.size(), split.validation.size(), p.scene().string());
}

void cmd_pretrain(const RunConfig& cfg) {
  const RunPaths p = paths_of(cfg);
  const SceneSplit split = load_split(p);
  NetworkParams params = init_network(cfg.network(), derive_seed(cfg.seed, 11));
  TrainLog log;
  train(params, std::span<const ClientDataset>(&split.pretrain, 1), cfg.pretrain_iters, derive_seed(cfg.seed, 12),
        cfg.training(), nullptr, &log);
  save_checkpoint(p.init(), params);
  update_manifest(cfg, "pretrain", {{"iters", cfg.pretrain_iters},
                                    {"images", split.pretrain.images.size()},
                                    {"final_loss", log.losses.empty() ? 0.0 : log.losses.back()}});
  spdlog::info("pretrained for {} iterations -> {}", cfg.pretrain_iters, p.init().string());
}

void cmd_baseline(const RunConfig& cfg) {
  const RunPaths p = paths_of(cfg);
  const SceneSplit split = load_split(p);
  const auto clients = checked_clients(cfg, split);
  const NetworkParams init = load_checkpoint(p.init(), cfg.network());
  const MergeSchedule schedule = cfg.schedule();
  const BaselineResult res = run_baseline(schedule, init, clients, cfg.training());
  save_checkpoint(p.base(), res.model);
  const std::uint64_t disk = files_on_disk(p, clients);
  update_manifest(cfg, "baseline", {{"iters", schedule.baseline_iters},
                                    {"ledger", ledger_json(res.ledger)},
                                    {"client_file_bytes", disk},
                                    {"ledger_matches_files", disk == res.ledger.total_raw()}});
  spdlog::info("baseline: B_baseline = {} bytes", res.ledger.total_raw());
}

void cmd_federated(const RunConfig& cfg, bool external_clients) {
  const RunPaths p = paths_of(cfg);
  const SceneSplit split = load_split(p);
  const auto clients = checked_clients(cfg, split);
  const NetArch arch = cfg.network();
  const NetworkParams init = load_checkpoint(p.init(), arch);
  const MergeSchedule schedule = cfg.schedule();
  const FedOptions opts = cfg.fed_options();

  FedResult res;
  if (cfg.transport == "inproc") {
    res = run_fednerf(schedule, init, clients, opts);
  } else if (external_clients) {
    TcpListener listener(cfg.host, cfg.port);
    std::cout << "listening on " << cfg.host << ":" << listener.port() << std::endl;
    TcpPool pool(listener, schedule.clients);
    res = run_fednerf_server(schedule, init, pool, dataset_weights(clients, opts.weighting), opts);
  } else {
    res = run_fednerf_tcp(schedule, init, clients, opts, cfg.host);
  }
  save_checkpoint(p.fed(), res.model);

  const std::uint64_t expected =
      expected_fednerf_bytes(schedule.clients, schedule.merges, res.frozen_bytes, res.learnable_bytes);
  json layers = json::array();
  std::size_t trunk = 0, trunk_strict = 0;
  for (std::size_t z = 0; z < res.ranks.size(); ++z) {
    const LayerShape s = arch.shape_of(z);
    const std::size_t full = std::min(s.out, s.in);
    if (s.tag == LayerTag::trunk) {
      ++trunk;
      if (res.ranks[z] < full) ++trunk_strict;
    }
    layers.push_back({{"layer", z}, {"tag", to_string(s.tag)}, {"out", s.out}, {"in", s.in},
                      {"rank", res.ranks[z]}, {"full_rank", full}});
  }
  const std::uint64_t dense_bytes = serialize(init).size();
  json section = {
      {"schedule", schedule_json(schedule)},
      {"transport", cfg.transport},
      {"layers", layers},
      {"trunk_layers", trunk},
      {"trunk_layers_truncated", trunk_strict},
      {"frozen_bytes", res.frozen_bytes},
      {"learnable_bytes", res.learnable_bytes},
      {"dense_model_bytes", dense_bytes},
      {"update_compression", static_cast<double>(dense_bytes) / static_cast<double>(res.learnable_bytes)},
      {"ledger", ledger_json(res.ledger)},
      {"formula_bytes", expected},
      {"ledger_matches_formula", expected == res.ledger.total_raw()},
  };
  const json manifest = read_manifest(p);
  if (manifest.contains("baseline")) {
    const auto base_raw = manifest["baseline"]["ledger"]["total_raw_bytes"].get<std::uint64_t>();
    const auto base_cmp = manifest["baseline"]["ledger"]["total_compressed_bytes"].get<std::uint64_t>();
    section["cr_raw"] = static_cast<double>(base_raw) / static_cast<double>(res.ledger.total_raw());
    section["cr_deflated"] = static_cast<double>(base_cmp) / static_cast<double>(res.ledger.total_compressed());
  }
  update_manifest(cfg, "federated", section);
  spdlog::info("federated: B_FedNeRF = {} bytes (formula {}), {} of {} trunk layers truncated",
               res.ledger.total_raw(), expected, trunk_strict, trunk);
  if (section.contains("cr_raw")) spdlog::info("CR (raw payloads) = {:.4f}", section["cr_raw"].get<double>());
}

void cmd_client(const RunConfig& cfg, std::size_t client) {
  const RunPaths p = paths_of(cfg);
  const SceneSplit split = load_split(p);
  if (client >= split.clients.size()) throw ConfigError("no client split " + std::to_string(client));
  ClientWorker worker(client, cfg.network(), split.clients[client], cfg.training(), cfg.iters_per_merge, cfg.seed);
  spdlog::info("client {} connecting to {}:{}", client, cfg.host, cfg.port);
  run_tcp_client(worker, cfg.host, cfg.port);
}

std::vector<EvalReport> cmd_compare(const RunConfig& cfg, const fs::path& init, const fs::path& base,
                                    const fs::path& fed) {
  const RunPaths p = paths_of(cfg);
  const SceneSplit split = load_split(p);
  const NetArch arch = cfg.network();
  std::vector<EvalReport> reports;
  const std::pair<const char*, const fs::path*> stages[] = {{"init", &init}, {"base", &base}, {"fed", &fed}};
  for (const auto& [stage, path] : stages) {
    reports.push_back(evaluate(load_checkpoint(*path, arch), split.validation, cfg.render(), cfg.task, stage));
  }
  write_csv(p.metrics(), reports);
  json summary = json::object();
  for (const auto& r : reports) {
    summary[r.stage] = {{"mean_mse", r.mean_mse()}, {"mean_psnr", r.mean_psnr()}, {"mean_ssim", r.mean_ssim()}};
  }
  update_manifest(cfg, "evaluation", {{"csv", p.metrics().string()}, {"stages", summary}});
  for (const auto& r : reports) {
    std::printf("%-5s  psnr %6.2f  ssim %.4f  mse %.6f\n", r.stage.c_str(), r.mean_psnr(), r.mean_ssim(), r.mean_mse());
  }
  return reports;
}

void cmd_render(const RunConfig& cfg, const fs::path& checkpoint, const std::string& view, const fs::path& output) {
  const RunPaths p = paths_of(cfg);
  const SceneSplit split = load_split(p);
  const NetworkParams params = load_checkpoint(checkpoint, cfg.network());
  std::vector<const PosedImage*> all;
  for (const auto& v : split.validation) all.push_back(&v);
  for (const auto& v : split.pretrain.images) all.push_back(&v);
  for (const auto& c : split.clients)
    for (const auto& v : c.images) all.push_back(&v);
  const PosedImage* chosen = nullptr;
  for (const auto* v : all)
    if (v->name == view) chosen = v;
  if (!chosen) {
    std::size_t idx = 0;
    const auto [ptr, ec] = std::from_chars(view.data(), view.data() + view.size(), idx);
    if (ec != std::errc() || ptr != view.data() + view.size() || idx >= split.validation.size()) {
      throw ConfigError("unknown view '" + view + "' (give a file name or a validation index)");
    }
    chosen = &split.validation[idx];
  }
  const Image img = render_image(Mlp::dense(params), geometry_of(*chosen), cfg.render(), cfg.task);
  write_ppm(output, img);
  spdlog::info("rendered {} -> {} (psnr {:.2f} dB)", chosen->name, output.string(), psnr(img, chosen->pixels));
}

void cmd_pipeline(const RunConfig& cfg) {
  const RunPaths p = paths_of(cfg);
  cmd_generate(cfg);
  cmd_pretrain(cfg);
  cmd_baseline(cfg);
  cmd_federated(cfg, false);
  cmd_compare(cfg, p.init(), p.base(), p.fed());
}

int run(int argc, char** argv) {
  CLI::App app{"Federated radiance-field training with low-rank update compression"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("-c,--config", config_path, "key = value config file");
  std::map<std::string, std::string> overrides;
  for (const auto& key : RunConfig::keys()) {
    app.add_option("--" + key, overrides[key], "override config key " + key);
  }

  auto* generate = app.add_subcommand("generate", "render the synthetic scene and write the client splits");
  auto* pretrain = app.add_subcommand("pretrain", "train the initial model on the pretraining views");
  auto* baseline = app.add_subcommand("baseline", "upload all data and train centrally");
  auto* federated = app.add_subcommand("federated", "run the federated protocol");
  bool external = false;
  federated->add_flag("--external-clients", external, "wait for `client` processes (tcp transport)");
  auto* client = app.add_subcommand("client", "run one federated client over tcp");
  std::size_t client_index = 0;
  client->add_option("--client", client_index, "client index k")->required();
  auto* compare = app.add_subcommand("compare", "score init, base and fed models on the validation views");
  std::string init_ck, base_ck, fed_ck;
  compare->add_option("--init", init_ck, "initial checkpoint (default <out>/init.fnrf)");
  compare->add_option("--base", base_ck, "baseline checkpoint (default <out>/base.fnrf)");
  compare->add_option("--fed", fed_ck, "federated checkpoint (default <out>/fed.fnrf)");
  auto* render = app.add_subcommand("render", "render one view of a checkpoint to PPM");
  std::string checkpoint, view = "0", output = "render.ppm";
  render->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  render->add_option("--view", view, "view file name or validation index");
  render->add_option("--output", output, "output PPM path");
  auto* pipeline = app.add_subcommand("pipeline", "generate, pretrain, baseline, federated and compare");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  init_logging();
  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      require_exists(config_path);
      cfg = RunConfig::load(config_path);
    }
    for (const auto& key : RunConfig::keys()) {
      if (app.count("--" + key) > 0) cfg.set(key, overrides[key]);
    }
    cfg.validate();
    const RunPaths p = paths_of(cfg);

    if (generate->parsed()) cmd_generate(cfg);
    else if (pretrain->parsed()) cmd_pretrain(cfg);
    else if (baseline->parsed()) cmd_baseline(cfg);
    else if (federated->parsed()) cmd_federated(cfg, external);
    else if (client->parsed()) cmd_client(cfg, client_index);
    else if (compare->parsed()) {
      cmd_compare(cfg, init_ck.empty() ? p.init() : fs::path(init_ck), base_ck.empty() ? p.base() : fs::path(base_ck),
                  fed_ck.empty() ? p.fed() : fs::path(fed_ck));
    } else if (render->parsed()) cmd_render(cfg, checkpoint, view, output);
    else if (pipeline->parsed()) cmd_pipeline(cfg);
    return kExitOk;
  } catch (const MissingFile& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissingFile;
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid config: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "error: divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
}

}  // namespace fednerf::cli
