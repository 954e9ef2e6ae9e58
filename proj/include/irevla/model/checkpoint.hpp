#pragma once

#include <bit>
#include <cstdint>
#include <iterator>
#include <span>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "irevla/core/digest.hpp"
#include "irevla/core/errors.hpp"
#include "irevla/model/policy_net.hpp"

namespace irevla::model {

// File layout (all integers little-endian):
//   "IRVL" | u16 version | u32 meta_len | meta (UTF-8 "key=value\n" lines)
//   | u32 param_count | { u32 name_len | name | u32 ndims | u32 dims[ndims] | f64 data[] }*
//   | u32 crc32 of every preceding byte
inline constexpr char kCheckpointMagic[4] = {'I', 'R', 'V', 'L'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind { NotFound, BadMagic, VersionMismatch, Truncated, Integrity, Layout };
  CheckpointError(Kind k, const std::string& msg) : Error(msg), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

using Metadata = std::map<std::string, std::string>;

namespace detail {
class ByteWriter {
 public:
  void u16(std::uint16_t v) { raw(&v, 2); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void bytes(const void* p, std::size_t n) { raw(p, n); }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  void raw(const void* p, std::size_t n) {
    auto b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  bool ok() const { return ok_; }
  std::size_t remaining() const { return n_ - off_; }
  std::uint16_t u16() { std::uint16_t v = 0; raw(&v, 2); return v; }
  std::uint32_t u32() { std::uint32_t v = 0; raw(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v = 0; raw(&v, 8); return v; }
  double f64() { double v = 0; raw(&v, 8); return v; }
  std::string str(std::size_t n) {
    if (!check(n)) return {};
    std::string s(reinterpret_cast<const char*>(p_ + off_), n);
    off_ += n;
    return s;
  }
  bool check(std::size_t n) {
    if (!ok_ || n > n_ - off_) ok_ = false;
    return ok_;
  }
  void raw(void* dst, std::size_t n) {
    if (!check(n)) return;
    std::memcpy(dst, p_ + off_, n);
    off_ += n;
  }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t off_ = 0;
  bool ok_ = true;
};
}  // namespace detail

inline Metadata model_metadata(const ModelConfig& c) {
  return {{"model.d_in", std::to_string(c.d_in)},      {"model.tokens", std::to_string(c.tokens)},
          {"model.d", std::to_string(c.d)},            {"model.blocks", std::to_string(c.blocks)},
          {"model.hidden", std::to_string(c.hidden)},  {"model.d_a", std::to_string(c.d_a)},
          {"model.lora_rank", std::to_string(c.lora_rank)}};
}

// Doubles in metadata use hex-float text so they round-trip exactly.
inline std::string exact_double(double v) {
  std::ostringstream os;
  os << std::hexfloat << v;
  return os.str();
}
inline double parse_exact_double(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

inline std::vector<std::uint8_t> serialize_checkpoint(const PolicyNet& net, Metadata meta = {}) {
  const ModelConfig& c = net.config();
  for (auto& [k, v] : model_metadata(c)) meta[k] = v;
  meta["model.lora_alpha"] = exact_double(c.lora_alpha);
  meta["model.log_std_init"] = exact_double(c.log_std_init);
  meta["model.log_std_min"] = exact_double(c.log_std_min);
  meta["model.log_std_max"] = exact_double(c.log_std_max);
  meta["model.seed"] = std::to_string(c.seed);

  std::string meta_text;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ContractError("checkpoint metadata key/value contains a separator: " + k);
    meta_text += k + "=" + v + "\n";
  }

  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(meta_text.size()));
  w.bytes(meta_text.data(), meta_text.size());
  w.u32(static_cast<std::uint32_t>(net.params().size()));
  for (const auto& p : net.params()) {
    w.u32(static_cast<std::uint32_t>(p.id.size()));
    w.bytes(p.id.data(), p.id.size());
    w.u32(static_cast<std::uint32_t>(p.value.shape().size()));
    for (auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.value.values()) w.f64(v);
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = crc32_of(buf);
  w.u32(crc);
  return std::move(buf);
}

struct LoadedCheckpoint {
  Metadata meta;
  std::vector<std::pair<std::string, nn::Tensor>> params;
};

inline LoadedCheckpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  using K = CheckpointError::Kind;
  if (bytes.size() < 6) throw CheckpointError(K::Truncated, "checkpoint truncated: header incomplete");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError(K::BadMagic, "not a checkpoint: bad magic bytes");
  std::uint16_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 2);
  if (version != kCheckpointVersion)
    throw CheckpointError(K::VersionMismatch, "checkpoint format version " + std::to_string(version) +
                                                  ", expected " + std::to_string(kCheckpointVersion));

  detail::ByteReader r(bytes.data() + 6, bytes.size() - 6);
  LoadedCheckpoint out;
  const std::uint32_t meta_len = r.u32();
  std::istringstream meta(r.str(meta_len));
  for (std::string line; std::getline(meta, line);) {
    auto eq = line.find('=');
    if (eq != std::string::npos) out.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count && r.ok(); ++i) {
    std::string name = r.str(r.u32());
    const std::uint32_t ndims = r.u32();
    if (!r.check(std::size_t{ndims} * 4)) break;
    nn::Shape shape(ndims);
    std::size_t n = 1;
    for (auto& d : shape) n *= (d = r.u32());
    if (!r.check(n * 8)) break;
    std::vector<double> data(n);
    r.raw(data.data(), n * 8);
    out.params.emplace_back(std::move(name), nn::Tensor(std::move(shape), std::move(data)));
  }

  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  if (bytes.size() >= 10) std::memcpy(&stored, bytes.data() + body, 4);
  const bool crc_ok = bytes.size() >= 10 && crc32_of(bytes.first(body)) == stored;
  if (!r.ok() || r.remaining() != 4) {
    if (crc_ok) throw CheckpointError(K::Layout, "checkpoint structure is inconsistent");
    if (!r.ok()) throw CheckpointError(K::Truncated, "checkpoint truncated: payload ends early");
    throw CheckpointError(K::Integrity, "checkpoint integrity check failed (trailing bytes)");
  }
  if (!crc_ok) throw CheckpointError(K::Integrity, "checkpoint integrity check failed (CRC32 mismatch)");
  return out;
}

inline ModelConfig model_config_from(const Metadata& m) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = m.find(k);
    if (it == m.end()) throw CheckpointError(CheckpointError::Kind::Layout, "checkpoint metadata lacks " + k);
    return it->second;
  };
  ModelConfig c;
  c.d_in = std::stoul(get("model.d_in"));
  c.tokens = std::stoul(get("model.tokens"));
  c.d = std::stoul(get("model.d"));
  c.blocks = std::stoul(get("model.blocks"));
  c.hidden = std::stoul(get("model.hidden"));
  c.d_a = std::stoul(get("model.d_a"));
  c.lora_rank = std::stoul(get("model.lora_rank"));
  c.lora_alpha = parse_exact_double(get("model.lora_alpha"));
  c.log_std_init = parse_exact_double(get("model.log_std_init"));
  c.log_std_min = parse_exact_double(get("model.log_std_min"));
  c.log_std_max = parse_exact_double(get("model.log_std_max"));
  c.seed = std::stoull(get("model.seed"));
  return c;
}

// Overwrites `net`'s parameters with the checkpoint's; ids and shapes must
// match exactly.
inline void assign_params(PolicyNet& net, const LoadedCheckpoint& ck) {
  auto& store = net.params();
  if (ck.params.size() != store.size())
    throw CheckpointError(CheckpointError::Kind::Layout, "checkpoint has " + std::to_string(ck.params.size()) +
                                                             " parameters, model has " + std::to_string(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (ck.params[i].first != store[i].id || ck.params[i].second.shape() != store[i].value.shape())
      throw CheckpointError(CheckpointError::Kind::Layout, "checkpoint parameter '" + ck.params[i].first +
                                                               "' does not match model parameter '" + store[i].id + "'");
    store[i].value = ck.params[i].second;
  }
  store.zero_grad();
}

inline PolicyNet deserialize_checkpoint(std::span<const std::uint8_t> bytes, Metadata* meta_out = nullptr) {
  LoadedCheckpoint ck = parse_checkpoint(bytes);
  PolicyNet net(model_config_from(ck.meta));
  assign_params(net, ck);
  if (meta_out) *meta_out = std::move(ck.meta);
  return net;
}

inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::NotFound, "checkpoint not found: " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

inline void save_checkpoint(const PolicyNet& net, const std::filesystem::path& path, Metadata meta = {}) {
  write_file_atomic(path, serialize_checkpoint(net, std::move(meta)));
}

inline PolicyNet load_checkpoint(const std::filesystem::path& path, Metadata* meta_out = nullptr) {
  auto bytes = read_file_bytes(path);
  return deserialize_checkpoint(bytes, meta_out);
}

}  // namespace irevla::model
