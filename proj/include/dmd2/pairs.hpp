#pragma once

// Noise/teacher-sample pairs (z, y = sample_ode(z)) for the regression baseline.
//
// File layout (little-endian), see docs/formats.md:
//   "DMD2PAIR" | u32 version | u32 dim | u64 count | u64 seed | u64 config_hash |
//   count x { f64 z[dim] | f64 y[dim] }

#include <cstdint>
#include <string>
#include <vector>

#include "dmd2/denoiser.hpp"
#include "dmd2/schedule.hpp"

namespace dmd2 {

inline constexpr std::uint32_t kPairFormatVersion = 1;

struct PairDataset {
  int dim = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  Matrix z;
  Matrix y;

  std::size_t count() const { return static_cast<std::size_t>(z.rows()); }
};

struct PairOptions {
  int count = 0;
  std::uint64_t seed = 0;
  int ode_steps = 50;
  TimestepRange range;
  std::uint64_t config_hash = 0;
  int threads = 1;
};

// Row i draws z from a stream seeded by (seed, i), and rows are processed in
// fixed-size chunks, so the output does not depend on the thread count.
PairDataset generate_pairs(const Denoiser& teacher, const NoiseSchedule& schedule,
                           const PairOptions& options);

std::vector<std::uint8_t> encode_pairs(const PairDataset& ds);
PairDataset decode_pairs(const std::vector<std::uint8_t>& bytes, const std::string& context);
void save_pairs(const std::string& path, const PairDataset& ds);
PairDataset load_pairs(const std::string& path);

}  // namespace dmd2
