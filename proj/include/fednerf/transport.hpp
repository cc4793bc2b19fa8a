#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fednerf/net.hpp"
#include "fednerf/radiance.hpp"

namespace fednerf {

enum class PayloadKind : std::uint8_t {
  frozen_set = 0,
  learnable_set = 1,
  dense_model = 2,
  dataset_upload = 3,
  // Control messages; never counted as parameter traffic.
  hello = 250,
  shutdown = 251,
  error = 252,
};

std::string to_string(PayloadKind kind);
bool is_control(PayloadKind kind);

/// Malformed or truncated serialized data.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Link failure during a run; carries the merge round it happened in.
class TransportError : public std::runtime_error {
 public:
  TransportError(const std::string& what, std::uint32_t round)
      : std::runtime_error(what + " (round " + std::to_string(round) + ")"), round_(round) {}
  std::uint32_t round() const { return round_; }

 private:
  std::uint32_t round_;
};

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kPayloadHeaderBytes = 4 + 2 + 1 + 2;

// Payload layout: "FNRF", version u16, kind u8, tensor-group count u16, then
// per tensor: rank u8, dims u32 each, float32 data. All little-endian.
// Learnable and dense payloads store weight then bias for every layer;
// frozen payloads store one right factor per layer.
std::vector<std::uint8_t> serialize(const FrozenSet& frozen);
std::vector<std::uint8_t> serialize(const LearnableSet& learnable);
std::vector<std::uint8_t> serialize(const NetworkParams& dense);

PayloadKind peek_kind(std::span<const std::uint8_t> bytes);
FrozenSet deserialize_frozen(std::span<const std::uint8_t> bytes);
LearnableSet deserialize_learnable(std::span<const std::uint8_t> bytes);
/// The architecture is not on the wire; shapes are checked against `arch`.
NetworkParams deserialize_dense(std::span<const std::uint8_t> bytes, const NetArch& arch);

/// Every value rounded through float32, i.e. what a receiver sees.
FrozenSet wire_rounded(const FrozenSet& frozen);
LearnableSet wire_rounded(const LearnableSet& learnable);
NetworkParams wire_rounded(const NetworkParams& dense);

/// Concatenated encoded image files of one client.
std::vector<std::uint8_t> dataset_payload(const ClientDataset& data);

struct ParamMessage {
  PayloadKind kind = PayloadKind::learnable_set;
  std::uint32_t round = 0;
  std::uint32_t client = 0;
  std::vector<std::uint8_t> payload;  // always the uncompressed bytes
};

/// Byte counts of one transferred message.
struct WireStats {
  std::uint64_t raw = 0;         // payload before compression
  std::uint64_t compressed = 0;  // payload as sent (== raw when uncompressed)
  std::uint64_t wire = 0;        // frame length prefix + envelope + payload
  bool deflated = false;
};

inline constexpr std::size_t kEnvelopeBytes = 1 + 4 + 4 + 1 + 4;
inline constexpr std::size_t kFramePrefixBytes = 4;

/// Envelope: kind u8, round u32, client u32, flags u8, raw length u32, body.
std::vector<std::uint8_t> encode_message(const ParamMessage& msg, bool compress, WireStats* stats = nullptr);
ParamMessage decode_message(std::span<const std::uint8_t> bytes, WireStats* stats = nullptr);

/// Raw DEFLATE stream.
std::vector<std::uint8_t> compress_payload(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> decompress_payload(std::span<const std::uint8_t> bytes, std::size_t raw_size);

/// Bidirectional frame channel. A frame is a u32 big-endian length plus body.
class Link {
 public:
  virtual ~Link() = default;
  virtual void send_frame(std::span<const std::uint8_t> body) = 0;
  /// Blocks for the next frame; throws std::runtime_error when the peer is gone.
  virtual std::vector<std::uint8_t> recv_frame() = 0;
  virtual void close() = 0;
};

WireStats send_message(Link& link, const ParamMessage& msg, bool compress);
ParamMessage recv_message(Link& link, WireStats* stats = nullptr);

/// In-process link end. Frames are copied through a shared queue pair.
class InProcLink final : public Link {
 public:
  struct Queue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::vector<std::uint8_t>> frames;
    bool closed = false;
  };

  InProcLink(std::shared_ptr<Queue> in, std::shared_ptr<Queue> out) : in_(std::move(in)), out_(std::move(out)) {}
  ~InProcLink() override { close(); }

  void send_frame(std::span<const std::uint8_t> body) override;
  std::vector<std::uint8_t> recv_frame() override;
  void close() override;
  /// True when a frame is waiting.
  bool has_frame() const;

 private:
  std::shared_ptr<Queue> in_;
  std::shared_ptr<Queue> out_;
};

std::pair<std::unique_ptr<InProcLink>, std::unique_ptr<InProcLink>> make_inproc_pair();

/// Stream socket link (one persistent connection).
class TcpLink final : public Link {
 public:
  explicit TcpLink(int fd) : fd_(fd) {}
  ~TcpLink() override { close(); }
  TcpLink(const TcpLink&) = delete;
  TcpLink& operator=(const TcpLink&) = delete;

  void send_frame(std::span<const std::uint8_t> body) override;
  std::vector<std::uint8_t> recv_frame() override;
  void close() override;

 private:
  int fd_;
};

class TcpListener {
 public:
  /// Binds host:port; port 0 picks an ephemeral port.
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  std::unique_ptr<TcpLink> accept();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Connects, retrying until `timeout_ms` has elapsed.
std::unique_ptr<TcpLink> tcp_connect(const std::string& host, std::uint16_t port, int timeout_ms = 10000);

}  // namespace fednerf
