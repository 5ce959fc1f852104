#pragma once

// Checkpoint container. Layout (all integers little-endian):
//   magic "MSNC-CKPT", version u16, config block, param count u32,
//   records sorted by name: u16 name length + name bytes + u8 ndim +
//   u32 extents + float32 payload, trailing FNV-1a 64 digest of all
//   preceding bytes.
// Parameters are stored as 32-bit floats regardless of the in-memory
// precision mode.

#include <cstdint>
#include <string>
#include <vector>

#include "msnc/common.hpp"
#include "msnc/transforms.hpp"

namespace msnc {

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  uint16_t version = 1;
  ModelConfig config;
  std::vector<CheckpointRecord> records;  // lexicographic by name
  uint64_t digest = 0;
};

uint64_t fnv1a64(const uint8_t* data, size_t n, uint64_t seed = 14695981039346656037ULL);

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::vector<uint8_t>& bytes);

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint_file(const std::string& path);

// Digest of an on-disk checkpoint without keeping the payload.
uint64_t checkpoint_digest(const std::string& path);

}  // namespace msnc
