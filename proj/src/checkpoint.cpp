#include "b3s/checkpoint.hpp"

#include <openssl/sha.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace b3s {

std::string to_hex(const ConfigHash& hash) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (std::uint8_t b : hash) {
    s += digits[b >> 4];
    s += digits[b & 0xf];
  }
  return s;
}

ConfigHash sha256(const std::string& bytes) {
  ConfigHash h{};
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), h.data());
  return h;
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out += static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string encode_tensors(const ParameterStore& params) {
  std::string out;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  params.for_each([&](const Parameter& p) {
    if (p.name.size() > 0xffff) throw CheckpointError("parameter name too long: " + p.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    const auto& dims = p.value.dims();
    if (dims.size() > 0xff) throw CheckpointError("tensor rank too large: " + p.name);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : p.value.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  });
  return out;
}

}  // namespace

std::string encode_checkpoint(const ParameterStore& params, const ConfigHash& config_hash) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put<std::uint32_t>(out, kCheckpointVersion);
  out += encode_tensors(params);
  out.append(reinterpret_cast<const char*>(config_hash.data()), config_hash.size());
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  const std::string magic = r.take(4, "magic");
  if (magic != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()))
    throw CheckpointError("not a checkpoint: bad magic bytes");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name = r.take(len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank == 0) throw CheckpointError("tensor '" + name + "' has rank 0");
    Shape dims;
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint32_t>("dims");
      if (d == 0) throw CheckpointError("tensor '" + name + "' has a zero dimension");
      dims.push_back(d);
      n *= d;
    }
    if (r.remaining() < n * 4) throw CheckpointError("checkpoint truncated in data of tensor '" + name + "'");
    if (ck.params.contains(name)) throw CheckpointError("duplicate tensor name '" + name + "'");
    Parameter& p = ck.params.add(name, dims);
    for (auto& v : p.value.data()) v = std::bit_cast<float>(r.get<std::uint32_t>("data"));
  }
  const std::string hash = r.take(32, "config hash");
  std::memcpy(ck.config_hash.data(), hash.data(), 32);
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const ParameterStore& params, const ConfigHash& config_hash, const std::string& path) {
  const std::string bytes = encode_checkpoint(params, config_hash);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

void restore_into(ParameterStore& store, const Checkpoint& ckpt, bool strict) {
  std::set<std::string> seen;
  ckpt.params.for_each([&](const Parameter& p) {
    if (!store.contains(p.name)) {
      if (strict) throw CheckpointError("unknown tensor '" + p.name + "' in checkpoint");
      return;
    }
    Parameter& dst = store.get(p.name);
    if (dst.value.dims() != p.value.dims())
      throw CheckpointError("tensor '" + p.name + "' has shape " + shape_to_string(p.value.dims()) + ", expected " +
                            shape_to_string(dst.value.dims()));
    dst.value = p.value;
    seen.insert(p.name);
  });
  if (strict) {
    store.for_each([&](const Parameter& p) {
      if (!seen.count(p.name)) throw CheckpointError("checkpoint is missing tensor '" + p.name + "'");
    });
  }
}

std::string weights_id(const ParameterStore& params) { return to_hex(sha256(encode_tensors(params))); }

}  // namespace b3s
