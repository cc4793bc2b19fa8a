#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fednerf/net.hpp"
#include "fednerf/trainer.hpp"
#include "fednerf/transport.hpp"

namespace fednerf {

struct MergeSchedule {
  double alpha = 0.9;
  std::size_t merges = 20;           // M
  std::size_t iters_per_merge = 1000;  // Υ; 0 runs the protocol without training
  std::size_t clients = 4;           // K
  std::size_t baseline_iters = 20000;  // T
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

enum class Direction : std::uint8_t { to_client = 0, to_server = 1 };
std::string to_string(Direction d);

struct TransferRecord {
  Direction direction = Direction::to_server;
  PayloadKind kind = PayloadKind::learnable_set;
  std::uint32_t round = 0;
  std::uint32_t client = 0;
  std::uint64_t raw_bytes = 0;
  std::uint64_t compressed_bytes = 0;
  std::uint64_t wire_bytes = 0;
};

class BandwidthLedger {
 public:
  void record(const TransferRecord& r) { records_.push_back(r); }
  const std::vector<TransferRecord>& records() const { return records_; }

  std::uint64_t total_raw() const;
  std::uint64_t total_compressed() const;
  std::uint64_t total_wire() const;
  std::uint64_t total_raw(PayloadKind kind) const;

 private:
  std::vector<TransferRecord> records_;
};

/// K(|R| + 2M|C|) in bytes.
std::uint64_t expected_fednerf_bytes(std::size_t clients, std::size_t merges, std::uint64_t frozen_bytes,
                                     std::uint64_t learnable_bytes);

/// B_baseline / B_FedNeRF from raw (or, when `compressed`, deflated) totals.
double compression_ratio(const BandwidthLedger& baseline, const BandwidthLedger& fed, bool compressed = false);

/// Per layer: SVD, rank for variance fraction alpha, truncation to L·R.
FactorizedParams parameterise(const NetworkParams& dense, double alpha);

/// W_z = L_z·R_z for every layer; biases copied.
NetworkParams recover(const NetArch& arch, const LearnableSet& learnable, const FrozenSet& frozen);
inline NetworkParams recover(const FactorizedParams& f) { return recover(f.arch, f.learnable, f.frozen); }

/// Size-weighted elementwise mean of weights and biases.
NetworkParams combine(std::span<const NetworkParams> models, std::span<const double> sizes);
LearnableSet combine_learnable(std::span<const LearnableSet> sets, std::span<const double> sizes);

/// Combines the recovered dense models and refits each L against R by least
/// squares. Biases are averaged as in combine.
LearnableSet combine_by_refactor(const NetArch& arch, std::span<const LearnableSet> sets, const FrozenSet& frozen,
                                 std::span<const double> sizes);

enum class SizeWeighting : std::uint8_t { bytes = 0, images = 1 };

/// Aggregation weight of each client dataset.
std::vector<double> dataset_weights(std::span<const ClientDataset> datasets, SizeWeighting weighting);

struct BaselineResult {
  NetworkParams model;
  BandwidthLedger ledger;
};

/// Every client uploads its images, then the server trains on their union
/// for T iterations with a fresh optimiser.
BaselineResult run_baseline(const MergeSchedule& schedule, const NetworkParams& initial,
                            std::span<const ClientDataset> datasets, const TrainConfig& cfg);

/// Client side of the federated protocol: keeps R, trains C for Υ iterations
/// per round, and retains its optimiser state across rounds.
class ClientWorker {
 public:
  ClientWorker(std::size_t id, NetArch arch, ClientDataset data, TrainConfig cfg, std::size_t iters,
               std::uint64_t seed);

  std::size_t id() const { return id_; }

  /// Reply for a learnable-set message, nothing for the frozen set.
  /// Throws std::invalid_argument on an unexpected message.
  std::optional<ParamMessage> handle(const ParamMessage& msg);

  /// Handles messages until shutdown. Replies mirror the request's
  /// compression. Failures are reported to the server before rethrowing.
  void serve(Link& link);

  /// Processes one incoming message; returns false after shutdown.
  bool serve_one(Link& link);

 private:
  std::size_t id_;
  NetArch arch_;
  ClientDataset data_;
  TrainConfig cfg_;
  std::size_t iters_;
  std::uint64_t seed_;
  std::optional<FrozenSet> frozen_;
  std::optional<AdamState> adam_;
};

/// The server's view of its K clients: one link per client index.
class ClientPool {
 public:
  virtual ~ClientPool() = default;
  virtual std::size_t size() const = 0;
  virtual Link& link(std::size_t k) = 0;
  /// Lets serial pools run their clients after the server has sent.
  virtual void pump() {}
  /// Called after shutdown messages are sent.
  virtual void finish() {}
};

/// Clients living in this process. Serial mode runs them in index order
/// inside pump(); otherwise each client has its own thread.
class InProcPool final : public ClientPool {
 public:
  InProcPool(std::vector<ClientWorker> workers, bool serial);
  ~InProcPool() override;

  std::size_t size() const override { return server_ends_.size(); }
  Link& link(std::size_t k) override { return *server_ends_[k]; }
  void pump() override;
  void finish() override;

 private:
  std::vector<ClientWorker> workers_;
  std::vector<std::unique_ptr<InProcLink>> server_ends_;
  std::vector<std::unique_ptr<InProcLink>> client_ends_;
  std::vector<std::thread> threads_;
  bool serial_;
};

/// Accepts `clients` connections; each announces its index with a hello.
class TcpPool final : public ClientPool {
 public:
  TcpPool(TcpListener& listener, std::size_t clients);
  std::size_t size() const override { return links_.size(); }
  Link& link(std::size_t k) override { return *links_[k]; }

 private:
  std::vector<std::unique_ptr<TcpLink>> links_;
};

/// Announces client index k to a TcpPool, then serves until shutdown.
void run_tcp_client(ClientWorker& worker, const std::string& host, std::uint16_t port, int timeout_ms = 30000);

struct FedOptions {
  TrainConfig train;
  SizeWeighting weighting = SizeWeighting::bytes;
  bool refactor = false;  // combine recovered models and refit L by least squares
  bool compress = false;  // deflate payloads; the ledger keeps both sizes
  bool serial = true;     // in-process clients run in index order
};

struct FedResult {
  NetworkParams model;       // recovered θ⁽ᴹ⁾
  FactorizedParams factors;  // final L, R
  std::vector<std::size_t> ranks;
  BandwidthLedger ledger;
  std::uint64_t frozen_bytes = 0;     // |R|
  std::uint64_t learnable_bytes = 0;  // |C|
};

/// Builds in-process clients for `datasets` and runs the protocol.
FedResult run_fednerf(const MergeSchedule& schedule, const NetworkParams& initial,
                      std::span<const ClientDataset> datasets, const FedOptions& opts);

/// Runs the server side over an existing pool; `sizes` are the aggregation
/// weights of the clients in index order.
FedResult run_fednerf_server(const MergeSchedule& schedule, const NetworkParams& initial, ClientPool& pool,
                             std::span<const double> sizes, const FedOptions& opts);

/// Runs the protocol over loopback TCP with one client thread per dataset.
FedResult run_fednerf_tcp(const MergeSchedule& schedule, const NetworkParams& initial,
                          std::span<const ClientDataset> datasets, const FedOptions& opts,
                          const std::string& host = "127.0.0.1");

std::vector<ClientWorker> make_workers(const MergeSchedule& schedule, const NetArch& arch,
                                       std::span<const ClientDataset> datasets, const TrainConfig& cfg);

}  // namespace fednerf
