#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "b3s/parameter.hpp"

namespace b3s {

inline constexpr std::array<char, 4> kCheckpointMagic = {'B', '3', 'S', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using ConfigHash = std::array<std::uint8_t, 32>;

std::string to_hex(const ConfigHash& hash);
ConfigHash sha256(const std::string& bytes);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ParameterStore params;  // values only; optimizer state starts fresh
  ConfigHash config_hash{};
};

/// Layout: magic, u32 version, u32 count, then per tensor u16 name length,
/// name, u8 rank, u32 dims, f32 data (all little-endian), then the 32-byte
/// config hash.
std::string encode_checkpoint(const ParameterStore& params, const ConfigHash& config_hash);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const ParameterStore& params, const ConfigHash& config_hash, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Copies values by name into `store`. Strict mode rejects names the store
/// does not have and store entries missing from the checkpoint.
void restore_into(ParameterStore& store, const Checkpoint& ckpt, bool strict = true);

/// SHA-256 of the encoded tensors alone; identifies a checkpoint's weights.
std::string weights_id(const ParameterStore& params);

}  // namespace b3s
