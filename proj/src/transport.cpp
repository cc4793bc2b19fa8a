#include "fednerf/transport.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "fednerf/image_io.hpp"

namespace fednerf {

std::string to_string(PayloadKind kind) {
  switch (kind) {
    case PayloadKind::frozen_set: return "frozen_set";
    case PayloadKind::learnable_set: return "learnable_set";
    case PayloadKind::dense_model: return "dense_model";
    case PayloadKind::dataset_upload: return "dataset_upload";
    case PayloadKind::hello: return "hello";
    case PayloadKind::shutdown: return "shutdown";
    case PayloadKind::error: return "error";
  }
  return "unknown";
}

bool is_control(PayloadKind kind) { return static_cast<std::uint8_t>(kind) >= 250; }

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() { return need(1)[0]; }
  std::uint16_t u16() {
    auto b = need(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    auto b = need(4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::span<const std::uint8_t> rest() {
    auto r = in_.subspan(pos_);
    pos_ = in_.size();
    return r;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> need(std::size_t n) {
    if (in_.size() - pos_ < n) throw DecodeError("truncated payload at byte " + std::to_string(pos_));
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'F', 'N', 'R', 'F'};

void check_representable(double v, const char* what) {
  if (!std::isfinite(v) || std::fabs(v) > static_cast<double>(std::numeric_limits<float>::max())) {
    throw std::invalid_argument(std::string("serialize: non-finite or out-of-range value in ") + what);
  }
}

void write_header(Writer& w, PayloadKind kind, std::size_t groups) {
  if (groups > 0xffff) throw std::invalid_argument("serialize: too many layers");
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u16(static_cast<std::uint16_t>(groups));
}

void write_matrix(Writer& w, const Matrix& m) {
  w.u8(2);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) {
    check_representable(v, "matrix");
    w.f32(v);
  }
}

void write_vector(Writer& w, const std::vector<double>& v) {
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (double x : v) {
    check_representable(x, "bias");
    w.f32(x);
  }
}

std::size_t read_header(Reader& r, PayloadKind expected) {
  for (char c : kMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) throw DecodeError("bad magic");
  }
  const std::uint16_t version = r.u16();
  if (version != kFormatVersion) throw DecodeError("unsupported format version " + std::to_string(version));
  const auto kind = static_cast<PayloadKind>(r.u8());
  if (kind != expected) {
    throw DecodeError("payload kind " + to_string(kind) + " where " + to_string(expected) + " was expected");
  }
  return r.u16();
}

Matrix read_matrix(Reader& r) {
  if (r.u8() != 2) throw DecodeError("expected a rank-2 tensor");
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  if (rows * cols > r.remaining() / 4) throw DecodeError("tensor larger than payload");
  Matrix m(rows, cols);
  for (double& v : m.data()) v = r.f32();
  return m;
}

std::vector<double> read_vector(Reader& r) {
  if (r.u8() != 1) throw DecodeError("expected a rank-1 tensor");
  const std::size_t n = r.u32();
  if (n > r.remaining() / 4) throw DecodeError("tensor larger than payload");
  std::vector<double> v(n);
  for (double& x : v) x = r.f32();
  return v;
}

std::vector<std::uint8_t> serialize_layers(PayloadKind kind, const std::vector<LayerParams>& layers) {
  Writer w;
  write_header(w, kind, layers.size());
  for (const auto& l : layers) {
    write_matrix(w, l.weight);
    write_vector(w, l.bias);
  }
  return w.take();
}

std::vector<LayerParams> deserialize_layers(std::span<const std::uint8_t> bytes, PayloadKind kind) {
  Reader r(bytes);
  const std::size_t n = read_header(r, kind);
  std::vector<LayerParams> layers(n);
  for (auto& l : layers) {
    l.weight = read_matrix(r);
    l.bias = read_vector(r);
    if (l.bias.size() != l.weight.rows()) throw DecodeError("bias length does not match weight rows");
  }
  if (r.remaining() != 0) throw DecodeError("trailing bytes after payload");
  return layers;
}

}  // namespace

std::vector<std::uint8_t> serialize(const FrozenSet& frozen) {
  Writer w;
  write_header(w, PayloadKind::frozen_set, frozen.right.size());
  for (const auto& m : frozen.right) write_matrix(w, m);
  return w.take();
}

std::vector<std::uint8_t> serialize(const LearnableSet& learnable) {
  return serialize_layers(PayloadKind::learnable_set, learnable.layers);
}

std::vector<std::uint8_t> serialize(const NetworkParams& dense) {
  return serialize_layers(PayloadKind::dense_model, dense.layers);
}

PayloadKind peek_kind(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPayloadHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DecodeError("not a parameter payload");
  }
  return static_cast<PayloadKind>(bytes[6]);
}

FrozenSet deserialize_frozen(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::size_t n = read_header(r, PayloadKind::frozen_set);
  FrozenSet f;
  f.right.reserve(n);
  for (std::size_t i = 0; i < n; ++i) f.right.push_back(read_matrix(r));
  if (r.remaining() != 0) throw DecodeError("trailing bytes after payload");
  return f;
}

LearnableSet deserialize_learnable(std::span<const std::uint8_t> bytes) {
  return LearnableSet{deserialize_layers(bytes, PayloadKind::learnable_set)};
}

NetworkParams deserialize_dense(std::span<const std::uint8_t> bytes, const NetArch& arch) {
  NetworkParams p{arch, deserialize_layers(bytes, PayloadKind::dense_model)};
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw DecodeError(std::string("model does not match architecture: ") + e.what());
  }
  return p;
}

namespace {

void round_matrix(Matrix& m) {
  for (double& v : m.data()) v = static_cast<double>(static_cast<float>(v));
}

void round_layers(std::vector<LayerParams>& layers) {
  for (auto& l : layers) {
    round_matrix(l.weight);
    for (double& v : l.bias) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace

FrozenSet wire_rounded(const FrozenSet& frozen) {
  FrozenSet out = frozen;
  for (auto& m : out.right) round_matrix(m);
  return out;
}

LearnableSet wire_rounded(const LearnableSet& learnable) {
  LearnableSet out = learnable;
  round_layers(out.layers);
  return out;
}

NetworkParams wire_rounded(const NetworkParams& dense) {
  NetworkParams out = dense;
  round_layers(out.layers);
  return out;
}

std::vector<std::uint8_t> dataset_payload(const ClientDataset& data) {
  std::vector<std::uint8_t> out;
  for (const auto& img : data.images) {
    const auto file = encode_ppm(img.pixels);
    out.insert(out.end(), file.begin(), file.end());
  }
  return out;
}

std::vector<std::uint8_t> compress_payload(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, -15, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw std::runtime_error("deflateInit2 failed");
  }
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(bytes.size())));
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  const std::size_t produced = zs.total_out;
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw std::runtime_error("deflate failed");
  out.resize(produced);
  return out;
}

std::vector<std::uint8_t> decompress_payload(std::span<const std::uint8_t> bytes, std::size_t raw_size) {
  z_stream zs{};
  if (inflateInit2(&zs, -15) != Z_OK) throw std::runtime_error("inflateInit2 failed");
  std::vector<std::uint8_t> out(raw_size);
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const std::size_t produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != raw_size) throw DecodeError("corrupt compressed payload");
  return out;
}

std::vector<std::uint8_t> encode_message(const ParamMessage& msg, bool compress, WireStats* stats) {
  if (msg.payload.size() > 0xffffffffu) throw std::invalid_argument("message payload too large");
  std::vector<std::uint8_t> body;
  const bool packed = compress && !msg.payload.empty();
  if (packed) body = compress_payload(msg.payload);
  const auto& sent = packed ? body : msg.payload;
  Writer w;
  w.u8(static_cast<std::uint8_t>(msg.kind));
  w.u32(msg.round);
  w.u32(msg.client);
  w.u8(packed ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(msg.payload.size()));
  w.bytes(sent);
  auto out = w.take();
  if (stats) *stats = {msg.payload.size(), sent.size(), kFramePrefixBytes + out.size(), packed};
  return out;
}

ParamMessage decode_message(std::span<const std::uint8_t> bytes, WireStats* stats) {
  Reader r(bytes);
  ParamMessage msg;
  msg.kind = static_cast<PayloadKind>(r.u8());
  msg.round = r.u32();
  msg.client = r.u32();
  const std::uint8_t flags = r.u8();
  const std::size_t raw_len = r.u32();
  if (flags & ~1u) throw DecodeError("unknown message flags");
  auto body = r.rest();
  if (flags & 1u) {
    msg.payload = decompress_payload(body, raw_len);
  } else {
    if (body.size() != raw_len) throw DecodeError("message length mismatch");
    msg.payload.assign(body.begin(), body.end());
  }
  if (stats) *stats = {raw_len, body.size(), kFramePrefixBytes + bytes.size(), (flags & 1u) != 0};
  return msg;
}

WireStats send_message(Link& link, const ParamMessage& msg, bool compress) {
  WireStats stats;
  const auto bytes = encode_message(msg, compress, &stats);
  link.send_frame(bytes);
  return stats;
}

ParamMessage recv_message(Link& link, WireStats* stats) { return decode_message(link.recv_frame(), stats); }

void InProcLink::send_frame(std::span<const std::uint8_t> body) {
  {
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw std::runtime_error("in-process link closed");
    out_->frames.emplace_back(body.begin(), body.end());
  }
  out_->cv.notify_one();
}

std::vector<std::uint8_t> InProcLink::recv_frame() {
  std::unique_lock lock(in_->mu);
  in_->cv.wait(lock, [&] { return !in_->frames.empty() || in_->closed; });
  if (in_->frames.empty()) throw std::runtime_error("in-process link closed by peer");
  auto f = std::move(in_->frames.front());
  in_->frames.pop_front();
  return f;
}

void InProcLink::close() {
  for (auto* q : {in_.get(), out_.get()}) {
    {
      std::lock_guard lock(q->mu);
      q->closed = true;
    }
    q->cv.notify_all();
  }
}

bool InProcLink::has_frame() const {
  std::lock_guard lock(in_->mu);
  return !in_->frames.empty();
}

std::pair<std::unique_ptr<InProcLink>, std::unique_ptr<InProcLink>> make_inproc_pair() {
  auto a = std::make_shared<InProcLink::Queue>();
  auto b = std::make_shared<InProcLink::Queue>();
  return {std::make_unique<InProcLink>(a, b), std::make_unique<InProcLink>(b, a)};
}

}  // namespace fednerf
