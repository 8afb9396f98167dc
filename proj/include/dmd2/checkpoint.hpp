#pragma once

// Parameter checkpoint container. Byte layout (little-endian) is documented
// in docs/formats.md:
//
//   "DMD2CKPT" | u32 version | u64 config_hash | string meta_json |
//   u32 count | count x { string name | u32 rank | rank x u64 extent | f64 values... }
//
// where string = u32 length followed by UTF-8 bytes.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "dmd2/mlp.hpp"

namespace dmd2 {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t config_hash = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedParameter> tensors;

  const Tensor& find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& context);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a of the encoded bytes.
std::uint64_t checkpoint_hash(const Checkpoint& ckpt);

}  // namespace dmd2
