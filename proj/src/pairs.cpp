#include "dmd2/pairs.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <exception>
#include <mutex>
#include <thread>

#include "dmd2/binary_io.hpp"
#include "dmd2/diffusion.hpp"
#include "dmd2/errors.hpp"
#include "dmd2/random.hpp"

namespace dmd2 {

namespace {
constexpr char kMagic[8] = {'D', 'M', 'D', '2', 'P', 'A', 'I', 'R'};
constexpr Eigen::Index kChunkRows = 256;
}  // namespace

PairDataset generate_pairs(const Denoiser& teacher, const NoiseSchedule& schedule,
                           const PairOptions& options) {
  if (options.count < 0) throw ContractError("generate_pairs: count must be >= 0");
  const int d = teacher.dim();
  PairDataset ds{d, options.seed, options.config_hash, Matrix(options.count, d),
                 Matrix(options.count, d)};
  for (Eigen::Index i = 0; i < options.count; ++i) {
    Rng row_rng(mix_seed(options.seed, static_cast<std::uint64_t>(i)));
    for (int j = 0; j < d; ++j) ds.z(i, j) = row_rng.normal();
  }
  const Eigen::Index chunks = (options.count + kChunkRows - 1) / kChunkRows;
  std::atomic<Eigen::Index> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (Eigen::Index c = next++; c < chunks; c = next++) {
      try {
        const Eigen::Index begin = c * kChunkRows;
        const Eigen::Index rows = std::min<Eigen::Index>(kChunkRows, options.count - begin);
        const Matrix z = ds.z.middleRows(begin, rows);
        ds.y.middleRows(begin, rows) = sample_ode(teacher, schedule, z, options.ode_steps, options.range);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, options.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return ds;
}

std::vector<std::uint8_t> encode_pairs(const PairDataset& ds) {
  binio::Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kPairFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.dim));
  w.put<std::uint64_t>(ds.count());
  w.put<std::uint64_t>(ds.seed);
  w.put<std::uint64_t>(ds.config_hash);
  for (Eigen::Index i = 0; i < ds.z.rows(); ++i) {
    w.put_bytes(ds.z.row(i).data(), sizeof(double) * ds.dim);
    w.put_bytes(ds.y.row(i).data(), sizeof(double) * ds.dim);
  }
  return w.bytes();
}

PairDataset decode_pairs(const std::vector<std::uint8_t>& bytes, const std::string& context) {
  binio::Reader r(bytes, context);
  char magic[8];
  r.get_bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IoError(context + ": not a pair dataset (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kPairFormatVersion)
    throw Error(ErrorCode::kVersionMismatch,
                context + ": pair dataset version " + std::to_string(version));
  PairDataset ds;
  ds.dim = static_cast<int>(r.get<std::uint32_t>());
  const auto count = static_cast<Eigen::Index>(r.get<std::uint64_t>());
  ds.seed = r.get<std::uint64_t>();
  ds.config_hash = r.get<std::uint64_t>();
  ds.z.resize(count, ds.dim);
  ds.y.resize(count, ds.dim);
  for (Eigen::Index i = 0; i < count; ++i) {
    r.get_bytes(ds.z.row(i).data(), sizeof(double) * ds.dim);
    r.get_bytes(ds.y.row(i).data(), sizeof(double) * ds.dim);
  }
  if (r.remaining() != 0) throw IoError(context + ": trailing bytes after last record");
  return ds;
}

void save_pairs(const std::string& path, const PairDataset& ds) {
  binio::write_file(path, encode_pairs(ds));
}

PairDataset load_pairs(const std::string& path) { return decode_pairs(binio::read_file(path), path); }

}  // namespace dmd2
