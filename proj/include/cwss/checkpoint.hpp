#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cwss/capsule.hpp"
#include "cwss/tensor.hpp"

namespace cwss {

struct TrainState {
  int epoch = 0;
  float alpha = 0.0f;
  std::int64_t adam_step = 0;
};

// On-disk layout (all integers little-endian):
//   magic "CWSS" | u32 version | u32 header_len | header text
//   u32 block_count | blocks | u64 FNV-1a checksum of everything before it
// Each block: u32 name_len | name | u32 rank | u64 extents[rank] | f32 data.
// The header carries the architecture and scalar training state as
// key=value lines (alpha in hex-float form so round-trips are bitwise).
struct Checkpoint {
  std::uint32_t version = 1;
  ArchitectureConfig arch;
  TrainState state;
  std::map<std::string, Tensor> blocks;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::string encode_architecture(const ArchitectureConfig& arch, const TrainState& state);
void decode_architecture(const std::string& text, ArchitectureConfig& arch, TrainState& state);

}  // namespace cwss
