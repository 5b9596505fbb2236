#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "kpg/model.hpp"

namespace kpg {

// Binary checkpoint layout (all integers and floats little-endian):
//   magic "KPGCKPT\0", u32 version, u64 vocab fingerprint,
//   u32 config length, config text (ModelConfig::serialize),
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u64 dims[rank], f32 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model<float> model;
  std::uint64_t vocab_fingerprint = 0;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace kpg
