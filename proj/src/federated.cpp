#include "fednerf/federated.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fednerf {

void MergeSchedule::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in (0, 1]");
  if (merges < 1) throw std::invalid_argument("merges must be >= 1");
  if (clients < 1) throw std::invalid_argument("clients must be >= 1");
}

std::string to_string(Direction d) { return d == Direction::to_client ? "to_client" : "to_server"; }

std::uint64_t BandwidthLedger::total_raw() const {
  std::uint64_t t = 0;
  for (const auto& r : records_) t += r.raw_bytes;
  return t;
}

std::uint64_t BandwidthLedger::total_compressed() const {
  std::uint64_t t = 0;
  for (const auto& r : records_) t += r.compressed_bytes;
  return t;
}

std::uint64_t BandwidthLedger::total_wire() const {
  std::uint64_t t = 0;
  for (const auto& r : records_) t += r.wire_bytes;
  return t;
}

std::uint64_t BandwidthLedger::total_raw(PayloadKind kind) const {
  std::uint64_t t = 0;
  for (const auto& r : records_)
    if (r.kind == kind) t += r.raw_bytes;
  return t;
}

std::uint64_t expected_fednerf_bytes(std::size_t clients, std::size_t merges, std::uint64_t frozen_bytes,
                                     std::uint64_t learnable_bytes) {
  return clients * (frozen_bytes + 2 * merges * learnable_bytes);
}

double compression_ratio(const BandwidthLedger& baseline, const BandwidthLedger& fed, bool compressed) {
  const double num = static_cast<double>(compressed ? baseline.total_compressed() : baseline.total_raw());
  const double den = static_cast<double>(compressed ? fed.total_compressed() : fed.total_raw());
  if (den <= 0.0) throw std::invalid_argument("compression_ratio: empty federated ledger");
  return num / den;
}

FactorizedParams parameterise(const NetworkParams& dense, double alpha) {
  dense.validate();
  FactorizedParams f;
  f.arch = dense.arch;
  for (std::size_t z = 0; z < dense.layers.size(); ++z) {
    const auto& layer = dense.layers[z];
    require_finite(layer.weight, "layer " + std::to_string(z));
    const SvdResult d = svd(layer.weight);
    const std::size_t r = select_rank(d.singular, alpha);
    LowRankFactors lr = truncate(d, r);
    f.learnable.layers.push_back({std::move(lr.left), layer.bias});
    f.frozen.right.push_back(std::move(lr.right));
  }
  return f;
}

NetworkParams recover(const NetArch& arch, const LearnableSet& learnable, const FrozenSet& frozen) {
  FactorizedParams f{arch, learnable, frozen};
  f.validate();
  NetworkParams p;
  p.arch = arch;
  for (std::size_t z = 0; z < learnable.layers.size(); ++z) {
    p.layers.push_back({learnable.layers[z].weight * frozen.right[z], learnable.layers[z].bias});
  }
  return p;
}

namespace {

std::vector<double> normalised_weights(std::span<const double> sizes, std::size_t count) {
  if (count == 0) throw std::invalid_argument("combine: no models");
  if (sizes.size() != count) throw std::invalid_argument("combine: one size per model required");
  double total = 0.0;
  for (double s : sizes) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("combine: sizes must be positive");
    total += s;
  }
  std::vector<double> lambda(count);
  for (std::size_t k = 0; k < count; ++k) lambda[k] = sizes[k] / total;
  return lambda;
}

// x_0 + Σ λ_k (x_k − x_0): identical inputs come back bit-for-bit.
void blend(std::vector<double>& out, const std::vector<const std::vector<double>*>& xs,
           const std::vector<double>& lambda) {
  out = *xs[0];
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double ref = (*xs[0])[i];
    double acc = 0.0;
    for (std::size_t k = 1; k < xs.size(); ++k) acc += lambda[k] * ((*xs[k])[i] - ref);
    out[i] = ref + acc;
  }
}

std::vector<LayerParams> combine_layers(const std::vector<const std::vector<LayerParams>*>& sets,
                                        std::span<const double> sizes) {
  const auto lambda = normalised_weights(sizes, sets.size());
  const auto& first = *sets[0];
  for (const auto* s : sets) {
    if (s->size() != first.size()) throw std::invalid_argument("combine: layer counts differ");
    for (std::size_t z = 0; z < first.size(); ++z) {
      if ((*s)[z].weight.rows() != first[z].weight.rows() || (*s)[z].weight.cols() != first[z].weight.cols() ||
          (*s)[z].bias.size() != first[z].bias.size()) {
        throw std::invalid_argument("combine: shapes differ at layer " + std::to_string(z));
      }
    }
  }
  std::vector<LayerParams> out(first.size());
  for (std::size_t z = 0; z < first.size(); ++z) {
    std::vector<const std::vector<double>*> ws, bs;
    for (const auto* s : sets) {
      ws.push_back(&(*s)[z].weight.data());
      bs.push_back(&(*s)[z].bias);
    }
    std::vector<double> w;
    blend(w, ws, lambda);
    out[z].weight = Matrix(first[z].weight.rows(), first[z].weight.cols(), std::move(w));
    blend(out[z].bias, bs, lambda);
  }
  return out;
}

}  // namespace

NetworkParams combine(std::span<const NetworkParams> models, std::span<const double> sizes) {
  if (models.empty()) throw std::invalid_argument("combine: no models");
  std::vector<const std::vector<LayerParams>*> sets;
  for (const auto& m : models) {
    if (!(m.arch == models[0].arch)) throw std::invalid_argument("combine: architectures differ");
    sets.push_back(&m.layers);
  }
  return NetworkParams{models[0].arch, combine_layers(sets, sizes)};
}

LearnableSet combine_learnable(std::span<const LearnableSet> learnables, std::span<const double> sizes) {
  if (learnables.empty()) throw std::invalid_argument("combine: no models");
  std::vector<const std::vector<LayerParams>*> sets;
  for (const auto& s : learnables) sets.push_back(&s.layers);
  return LearnableSet{combine_layers(sets, sizes)};
}

LearnableSet combine_by_refactor(const NetArch& arch, std::span<const LearnableSet> learnables,
                                 const FrozenSet& frozen, std::span<const double> sizes) {
  std::vector<NetworkParams> dense;
  for (const auto& s : learnables) dense.push_back(recover(arch, s, frozen));
  const NetworkParams merged = combine(dense, sizes);
  LearnableSet out;
  for (std::size_t z = 0; z < merged.layers.size(); ++z) {
    out.layers.push_back({refactor_lstsq(merged.layers[z].weight, frozen.right[z]), merged.layers[z].bias});
  }
  return out;
}

std::vector<double> dataset_weights(std::span<const ClientDataset> datasets, SizeWeighting weighting) {
  std::vector<double> w;
  for (const auto& d : datasets) {
    w.push_back(weighting == SizeWeighting::bytes ? static_cast<double>(d.byte_size())
                                                  : static_cast<double>(d.images.size()));
  }
  return w;
}

BaselineResult run_baseline(const MergeSchedule& schedule, const NetworkParams& initial,
                            std::span<const ClientDataset> datasets, const TrainConfig& cfg) {
  schedule.validate();
  initial.validate();
  BaselineResult res{initial, {}};
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    const std::uint64_t bytes = datasets[k].byte_size();
    const std::uint64_t packed = compress_payload(dataset_payload(datasets[k])).size();
    res.ledger.record({Direction::to_server, PayloadKind::dataset_upload, 0, static_cast<std::uint32_t>(k), bytes,
                       packed, bytes + kEnvelopeBytes + kFramePrefixBytes});
  }
  spdlog::info("baseline: {} clients uploaded {} bytes, training {} iterations", datasets.size(),
               res.ledger.total_raw(), schedule.baseline_iters);
  train(res.model, datasets, schedule.baseline_iters, derive_seed(schedule.seed, 0xba5e), cfg);
  return res;
}

ClientWorker::ClientWorker(std::size_t id, NetArch arch, ClientDataset data, TrainConfig cfg, std::size_t iters,
                           std::uint64_t seed)
    : id_(id), arch_(std::move(arch)), data_(std::move(data)), cfg_(std::move(cfg)), iters_(iters), seed_(seed) {}

std::optional<ParamMessage> ClientWorker::handle(const ParamMessage& msg) {
  if (msg.client != id_) {
    throw std::invalid_argument("client " + std::to_string(id_) + " received a message for client " +
                                std::to_string(msg.client));
  }
  if (msg.kind == PayloadKind::frozen_set) {
    frozen_ = deserialize_frozen(msg.payload);
    return std::nullopt;
  }
  if (msg.kind != PayloadKind::learnable_set) {
    throw std::invalid_argument("client received unexpected " + to_string(msg.kind));
  }
  if (!frozen_) throw std::invalid_argument("client received a learnable set before the frozen set");
  LearnableSet c = deserialize_learnable(msg.payload);
  FactorizedParams{arch_, c, *frozen_}.validate();
  if (!adam_) adam_ = AdamState::for_params(c.layers, cfg_.adam);
  sparse_train(arch_, c, *frozen_, data_, iters_, derive_seed(seed_, id_, msg.round), cfg_, *adam_);
  return ParamMessage{PayloadKind::learnable_set, msg.round, static_cast<std::uint32_t>(id_), serialize(c)};
}

bool ClientWorker::serve_one(Link& link) {
  WireStats stats;
  const ParamMessage msg = recv_message(link, &stats);
  if (msg.kind == PayloadKind::shutdown) return false;
  try {
    if (auto reply = handle(msg)) send_message(link, *reply, stats.deflated);
  } catch (const std::exception& e) {
    const bool diverged = dynamic_cast<const DivergenceError*>(&e) != nullptr;
    ParamMessage err{PayloadKind::error, msg.round, static_cast<std::uint32_t>(id_), {}};
    err.payload.push_back(diverged ? 1 : 0);
    const std::string text = e.what();
    err.payload.insert(err.payload.end(), text.begin(), text.end());
    try {
      send_message(link, err, false);
    } catch (const std::exception&) {
    }
    throw;
  }
  return true;
}

void ClientWorker::serve(Link& link) {
  while (serve_one(link)) {
  }
}

InProcPool::InProcPool(std::vector<ClientWorker> workers, bool serial) : workers_(std::move(workers)), serial_(serial) {
  for (std::size_t k = 0; k < workers_.size(); ++k) {
    auto [server_end, client_end] = make_inproc_pair();
    server_ends_.push_back(std::move(server_end));
    client_ends_.push_back(std::move(client_end));
  }
  if (!serial_) {
    for (std::size_t k = 0; k < workers_.size(); ++k) {
      threads_.emplace_back([this, k] {
        try {
          workers_[k].serve(*client_ends_[k]);
        } catch (const std::exception& e) {
          spdlog::error("client {}: {}", k, e.what());
          client_ends_[k]->close();
        }
      });
    }
  }
}

void InProcPool::pump() {
  if (!serial_) return;
  for (std::size_t k = 0; k < workers_.size(); ++k) {
    try {
      while (client_ends_[k]->has_frame()) {
        if (!workers_[k].serve_one(*client_ends_[k])) break;
      }
    } catch (const std::exception& e) {
      spdlog::error("client {}: {}", k, e.what());
    }
  }
}

void InProcPool::finish() {
  pump();
  for (auto& t : threads_)
    if (t.joinable()) t.join();
}

InProcPool::~InProcPool() {
  for (auto& l : server_ends_) l->close();
  for (auto& t : threads_)
    if (t.joinable()) t.join();
}

TcpPool::TcpPool(TcpListener& listener, std::size_t clients) : links_(clients) {
  for (std::size_t i = 0; i < clients; ++i) {
    auto link = listener.accept();
    const ParamMessage hello = recv_message(*link);
    if (hello.kind != PayloadKind::hello) throw TransportError("expected hello from new connection", 0);
    if (hello.client >= clients || links_[hello.client]) {
      throw TransportError("invalid or duplicate client index " + std::to_string(hello.client), 0);
    }
    spdlog::info("client {} connected", hello.client);
    links_[hello.client] = std::move(link);
  }
}

void run_tcp_client(ClientWorker& worker, const std::string& host, std::uint16_t port, int timeout_ms) {
  auto link = tcp_connect(host, port, timeout_ms);
  send_message(*link, ParamMessage{PayloadKind::hello, 0, static_cast<std::uint32_t>(worker.id()), {}}, false);
  worker.serve(*link);
}

std::vector<ClientWorker> make_workers(const MergeSchedule& schedule, const NetArch& arch,
                                       std::span<const ClientDataset> datasets, const TrainConfig& cfg) {
  std::vector<ClientWorker> workers;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    workers.emplace_back(k, arch, datasets[k], cfg, schedule.iters_per_merge, schedule.seed);
  }
  return workers;
}

namespace {

ParamMessage receive_from(ClientPool& pool, std::size_t k, std::uint32_t round, WireStats& stats) {
  ParamMessage msg;
  try {
    msg = recv_message(pool.link(k), &stats);
  } catch (const DecodeError& e) {
    throw TransportError("client " + std::to_string(k) + ": " + e.what(), round);
  } catch (const std::runtime_error& e) {
    throw TransportError("lost client " + std::to_string(k) + ": " + e.what(), round);
  }
  if (msg.kind == PayloadKind::error) {
    const std::string text(msg.payload.begin() + (msg.payload.empty() ? 0 : 1), msg.payload.end());
    if (!msg.payload.empty() && msg.payload[0] == 1) {
      throw DivergenceError("client " + std::to_string(k) + " round " + std::to_string(round) + ": " + text);
    }
    throw TransportError("client " + std::to_string(k) + " failed: " + text, round);
  }
  if (msg.kind != PayloadKind::learnable_set || msg.round != round || msg.client != k) {
    throw TransportError("misrouted message from link " + std::to_string(k) + " (kind " + to_string(msg.kind) +
                             ", client " + std::to_string(msg.client) + ", round " + std::to_string(msg.round) + ")",
                         round);
  }
  return msg;
}

void send_to(ClientPool& pool, std::size_t k, const ParamMessage& msg, bool compress, BandwidthLedger& ledger) {
  WireStats stats;
  try {
    stats = send_message(pool.link(k), msg, compress);
  } catch (const std::runtime_error& e) {
    throw TransportError("lost client " + std::to_string(k) + ": " + e.what(), msg.round);
  }
  ledger.record({Direction::to_client, msg.kind, msg.round, msg.client, stats.raw, stats.compressed, stats.wire});
}

}  // namespace

FedResult run_fednerf_server(const MergeSchedule& schedule, const NetworkParams& initial, ClientPool& pool,
                             std::span<const double> sizes, const FedOptions& opts) {
  schedule.validate();
  const std::size_t k_clients = pool.size();
  if (k_clients != schedule.clients) {
    throw std::invalid_argument("pool has " + std::to_string(k_clients) + " clients, schedule expects " +
                                std::to_string(schedule.clients));
  }
  if (sizes.size() != k_clients) throw std::invalid_argument("one aggregation weight per client required");

  FedResult res;
  const FactorizedParams start = parameterise(initial, schedule.alpha);
  res.ranks = start.ranks();
  const FrozenSet frozen = wire_rounded(start.frozen);
  LearnableSet current = start.learnable;

  const auto frozen_payload = serialize(frozen);
  res.frozen_bytes = frozen_payload.size();
  for (std::size_t k = 0; k < k_clients; ++k) {
    send_to(pool, k, {PayloadKind::frozen_set, 0, static_cast<std::uint32_t>(k), frozen_payload}, opts.compress,
            res.ledger);
  }
  pool.pump();

  for (std::size_t m = 1; m <= schedule.merges; ++m) {
    const auto round = static_cast<std::uint32_t>(m);
    const auto payload = serialize(current);
    res.learnable_bytes = payload.size();
    for (std::size_t k = 0; k < k_clients; ++k) {
      send_to(pool, k, {PayloadKind::learnable_set, round, static_cast<std::uint32_t>(k), payload}, opts.compress,
              res.ledger);
    }
    pool.pump();
    std::vector<LearnableSet> updates;
    for (std::size_t k = 0; k < k_clients; ++k) {
      WireStats stats;
      const ParamMessage msg = receive_from(pool, k, round, stats);
      res.ledger.record({Direction::to_server, msg.kind, round, msg.client, stats.raw, stats.compressed, stats.wire});
      try {
        updates.push_back(deserialize_learnable(msg.payload));
      } catch (const DecodeError& e) {
        throw TransportError("client " + std::to_string(k) + ": " + e.what(), round);
      }
    }
    current = opts.refactor ? combine_by_refactor(initial.arch, updates, frozen, sizes)
                            : combine_learnable(updates, sizes);
    spdlog::debug("round {}/{} merged", m, schedule.merges);
  }

  for (std::size_t k = 0; k < k_clients; ++k) {
    try {
      send_message(pool.link(k), {PayloadKind::shutdown, static_cast<std::uint32_t>(schedule.merges),
                                  static_cast<std::uint32_t>(k), {}},
                   false);
    } catch (const std::exception&) {
    }
  }
  pool.finish();

  res.factors = FactorizedParams{initial.arch, current, frozen};
  res.model = recover(res.factors);
  return res;
}

FedResult run_fednerf(const MergeSchedule& schedule, const NetworkParams& initial,
                      std::span<const ClientDataset> datasets, const FedOptions& opts) {
  schedule.validate();
  if (datasets.size() != schedule.clients) {
    throw std::invalid_argument("got " + std::to_string(datasets.size()) + " client datasets, schedule expects " +
                                std::to_string(schedule.clients));
  }
  InProcPool pool(make_workers(schedule, initial.arch, datasets, opts.train), opts.serial);
  const auto sizes = dataset_weights(datasets, opts.weighting);
  return run_fednerf_server(schedule, initial, pool, sizes, opts);
}

FedResult run_fednerf_tcp(const MergeSchedule& schedule, const NetworkParams& initial,
                          std::span<const ClientDataset> datasets, const FedOptions& opts, const std::string& host) {
  schedule.validate();
  if (datasets.size() != schedule.clients) {
    throw std::invalid_argument("got " + std::to_string(datasets.size()) + " client datasets, schedule expects " +
                                std::to_string(schedule.clients));
  }
  TcpListener listener(host, 0);
  auto workers = make_workers(schedule, initial.arch, datasets, opts.train);
  std::vector<std::thread> threads;
  for (auto& w : workers) {
    threads.emplace_back([&w, &host, port = listener.port()] {
      try {
        run_tcp_client(w, host, port);
      } catch (const std::exception& e) {
        spdlog::error("client {}: {}", w.id(), e.what());
      }
    });
  }
  struct Joiner {
    std::vector<std::thread>& t;
    ~Joiner() {
      for (auto& x : t)
        if (x.joinable()) x.join();
    }
  } joiner{threads};
  std::optional<TcpPool> pool;
  pool.emplace(listener, schedule.clients);
  const auto sizes = dataset_weights(datasets, opts.weighting);
  try {
    return run_fednerf_server(schedule, initial, *pool, sizes, opts);
  } catch (...) {
    // Closing the links unblocks client threads before they are joined.
    pool.reset();
    throw;
  }
}

}  // namespace fednerf
