#include "dmd2/checkpoint.hpp"

#include <cstring>

#include "dmd2/binary_io.hpp"
#include "dmd2/errors.hpp"
#include "dmd2/hash.hpp"

namespace dmd2 {

namespace {
constexpr char kMagic[8] = {'D', 'M', 'D', '2', 'C', 'K', 'P', 'T'};
}

const Tensor& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.tensor;
  throw IoError("checkpoint: no tensor named '" + name + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  binio::Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(ckpt.config_hash);
  w.put_string(ckpt.meta.dump());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t extent : tensor.shape()) w.put<std::uint64_t>(extent);
    const auto values = tensor.values();
    w.put_bytes(values.data(), values.size() * sizeof(double));
  }
  return w.bytes();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& context) {
  binio::Reader r(bytes, context);
  char magic[8];
  r.get_bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IoError(context + ": not a checkpoint file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::kVersionMismatch, context + ": checkpoint version " +
                                                 std::to_string(version) + ", expected " +
                                                 std::to_string(kCheckpointVersion));
  Checkpoint ckpt;
  ckpt.config_hash = r.get<std::uint64_t>();
  try {
    ckpt.meta = nlohmann::json::parse(r.get_string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(context + ": corrupt metadata: " + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedParameter entry;
    entry.name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& extent : shape) extent = r.get<std::uint64_t>();
    std::vector<double> values(shape_numel(shape));
    r.get_bytes(values.data(), values.size() * sizeof(double));
    entry.tensor = Tensor::from_data(std::move(shape), std::move(values), true);
    ckpt.tensors.push_back(std::move(entry));
  }
  if (r.remaining() != 0) throw IoError(context + ": trailing bytes after last tensor");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  binio::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(binio::read_file(path), path);
}

std::uint64_t checkpoint_hash(const Checkpoint& ckpt) {
  Fnv1a h;
  h.update(encode_checkpoint(ckpt));
  return h.digest();
}

}  // namespace dmd2
