#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "irevla/core/digest.hpp"
#include "irevla/core/errors.hpp"
#include "irevla/env/trajectory.hpp"

namespace irevla::split {

using env::Trajectory;
using nn::Tensor;

// Frame: u32 big-endian payload length | kind | version | payload.
inline constexpr std::size_t kHeaderSize = 6;
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class Kind : std::uint8_t {
  Hello = 0x01,
  WeightSync = 0x02,
  TrajBatch = 0x03,
  StageDone = 0x04,
  Ack = 0x05,
  Metrics = 0x06,
  Error = 0x7F,
};

inline bool known_kind(std::uint8_t k) {
  return (k >= 0x01 && k <= 0x06) || k == 0x7F;
}

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Hello: return "Hello";
    case Kind::WeightSync: return "WeightSync";
    case Kind::TrajBatch: return "TrajBatch";
    case Kind::StageDone: return "StageDone";
    case Kind::Ack: return "Ack";
    case Kind::Metrics: return "Metrics";
    case Kind::Error: return "Error";
  }
  return "?";
}

struct FramingError : Error {
  using Error::Error;
};
struct ProtocolError : Error {
  using Error::Error;
};
struct NegotiationError : Error {
  using Error::Error;
};

struct Message {
  Kind kind = Kind::Ack;
  std::uint8_t version = kProtocolVersion;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const Message&, const Message&) = default;
};

struct FrameHeader {
  std::uint32_t length = 0;
  std::uint8_t kind = 0;
  std::uint8_t version = 0;
};

inline std::vector<std::uint8_t> encode(const Message& m) {
  if (m.payload.size() > kMaxPayload) throw FramingError("payload exceeds the frame limit");
  const auto n = static_cast<std::uint32_t>(m.payload.size());
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + n);
  out.push_back(static_cast<std::uint8_t>(n >> 24));
  out.push_back(static_cast<std::uint8_t>(n >> 16));
  out.push_back(static_cast<std::uint8_t>(n >> 8));
  out.push_back(static_cast<std::uint8_t>(n));
  out.push_back(static_cast<std::uint8_t>(m.kind));
  out.push_back(m.version);
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return out;
}

// Validates a header: size limit, known kind, matching version.
inline FrameHeader parse_header(std::span<const std::uint8_t> h) {
  if (h.size() < kHeaderSize) throw FramingError("truncated frame header");
  FrameHeader fh;
  fh.length = (std::uint32_t{h[0]} << 24) | (std::uint32_t{h[1]} << 16) | (std::uint32_t{h[2]} << 8) | h[3];
  fh.kind = h[4];
  fh.version = h[5];
  if (fh.length > kMaxPayload) throw FramingError("declared payload of " + std::to_string(fh.length) + " bytes exceeds the limit");
  if (!known_kind(fh.kind)) {
    char k[8];
    std::snprintf(k, sizeof k, "0x%02x", fh.kind);
    throw ProtocolError(std::string("unknown message kind ") + k);
  }
  if (fh.version != kProtocolVersion)
    throw NegotiationError("protocol version " + std::to_string(fh.version) + ", expected " + std::to_string(kProtocolVersion));
  return fh;
}

// Decodes exactly one frame occupying all of `bytes`.
inline Message decode(std::span<const std::uint8_t> bytes) {
  FrameHeader h = parse_header(bytes);
  if (bytes.size() - kHeaderSize != h.length)
    throw FramingError("frame declares " + std::to_string(h.length) + " payload bytes, carries " +
                       std::to_string(bytes.size() - kHeaderSize));
  Message m;
  m.kind = static_cast<Kind>(h.kind);
  m.version = h.version;
  m.payload.assign(bytes.begin() + kHeaderSize, bytes.end());
  return m;
}

// ------------------------------------------------------------ payloads

namespace wire {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void u64(std::uint64_t v) {
    for (int s = 56; s >= 0; s -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void blob(std::span<const std::uint8_t> b) {
    u32(static_cast<std::uint32_t>(b.size()));
    buf_.insert(buf_.end(), b.begin(), b.end());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) f64(v);
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() {
    need(1);
    return b_[off_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | b_[off_++];
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | b_[off_++];
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + off_), n);
    off_ += n;
    return s;
  }
  std::vector<std::uint8_t> blob() {
    const auto n = u32();
    need(n);
    std::vector<std::uint8_t> v(b_.begin() + static_cast<std::ptrdiff_t>(off_), b_.begin() + static_cast<std::ptrdiff_t>(off_ + n));
    off_ += n;
    return v;
  }
  Tensor tensor() {
    const auto rank = u32();
    if (rank > 4) throw ProtocolError("tensor rank " + std::to_string(rank) + " in payload");
    nn::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(u32());
      n *= shape.back();
    }
    need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return Tensor(std::move(shape), std::move(v));
  }
  void finish() const {
    if (off_ != b_.size()) throw ProtocolError("trailing bytes in payload");
  }

 private:
  void need(std::size_t n) const {
    if (n > b_.size() - off_) throw ProtocolError("payload truncated");
  }
  std::span<const std::uint8_t> b_;
  std::size_t off_ = 0;
};

}  // namespace wire

struct HelloPayload {
  std::uint64_t config_digest = 0;
  std::string role;
};

struct WeightSyncPayload {
  std::uint64_t counter = 0;
  std::uint64_t digest = 0;  // parameter digest of the shipped network
  std::vector<std::uint8_t> checkpoint;
  std::uint32_t crc = 0;     // CRC32 of the checkpoint bytes
};

struct TrajBatchPayload {
  std::uint32_t task_index = 0;
  std::uint32_t sequence = 0;
  std::vector<Trajectory> trajectories;
};

struct StageDonePayload {
  std::uint32_t task_index = 0;
  std::uint32_t batches = 0;
  std::vector<std::uint8_t> checkpoint;  // pi1 after stage 1
};

inline Message make_message(Kind k, std::vector<std::uint8_t> payload = {}) { return Message{k, kProtocolVersion, std::move(payload)}; }

inline Message encode_hello(const HelloPayload& p) {
  wire::Writer w;
  w.u64(p.config_digest);
  w.str(p.role);
  return make_message(Kind::Hello, w.take());
}
inline HelloPayload decode_hello(const Message& m) {
  wire::Reader r(m.payload);
  HelloPayload p;
  p.config_digest = r.u64();
  p.role = r.str();
  r.finish();
  return p;
}

inline Message encode_weight_sync(const WeightSyncPayload& p) {
  wire::Writer w;
  w.u64(p.counter);
  w.u64(p.digest);
  w.blob(p.checkpoint);
  w.u32(p.crc);
  return make_message(Kind::WeightSync, w.take());
}
inline WeightSyncPayload decode_weight_sync(const Message& m) {
  wire::Reader r(m.payload);
  WeightSyncPayload p;
  p.counter = r.u64();
  p.digest = r.u64();
  p.checkpoint = r.blob();
  p.crc = r.u32();
  r.finish();
  if (crc32_of(p.checkpoint) != p.crc) throw ProtocolError("WeightSync checkpoint CRC mismatch");
  return p;
}

inline Message encode_traj_batch(const TrajBatchPayload& p) {
  wire::Writer w;
  w.u32(p.task_index);
  w.u32(p.sequence);
  w.u32(static_cast<std::uint32_t>(p.trajectories.size()));
  for (const auto& t : p.trajectories) {
    w.str(t.task_id);
    w.u64(t.seed);
    w.u8(t.success ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(t.steps.size()));
    for (const auto& s : t.steps) {
      w.tensor(s.obs);
      w.tensor(s.action);
      w.f64(s.reward);
      w.u8(s.done ? 1 : 0);
    }
  }
  return make_message(Kind::TrajBatch, w.take());
}
inline TrajBatchPayload decode_traj_batch(const Message& m) {
  wire::Reader r(m.payload);
  TrajBatchPayload p;
  p.task_index = r.u32();
  p.sequence = r.u32();
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Trajectory t;
    t.task_id = r.str();
    t.seed = r.u64();
    t.success = r.u8() != 0;
    const auto steps = r.u32();
    for (std::uint32_t k = 0; k < steps; ++k) {
      env::Transition s;
      s.obs = r.tensor();
      s.action = r.tensor();
      s.reward = r.f64();
      s.done = r.u8() != 0;
      t.steps.push_back(std::move(s));
    }
    if (!env::reward_sequence_valid(t)) throw ProtocolError("TrajBatch carries a trajectory with invalid rewards");
    p.trajectories.push_back(std::move(t));
  }
  r.finish();
  return p;
}

inline Message encode_stage_done(const StageDonePayload& p) {
  wire::Writer w;
  w.u32(p.task_index);
  w.u32(p.batches);
  w.blob(p.checkpoint);
  return make_message(Kind::StageDone, w.take());
}
inline StageDonePayload decode_stage_done(const Message& m) {
  wire::Reader r(m.payload);
  StageDonePayload p;
  p.task_index = r.u32();
  p.batches = r.u32();
  p.checkpoint = r.blob();
  r.finish();
  return p;
}

inline Message encode_text(Kind k, const std::string& text) {
  wire::Writer w;
  w.str(text);
  return make_message(k, w.take());
}
inline std::string decode_text(const Message& m) {
  wire::Reader r(m.payload);
  auto s = r.str();
  r.finish();
  return s;
}

}  // namespace irevla::split
