#pragma once

// Little-endian primitive encoding shared by the checkpoint and pair formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dmd2/errors.hpp"

namespace dmd2::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written in host order and require a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  template <typename T>
  T get() {
    T value;
    get_bytes(&value, sizeof(T));
    return value;
  }
  void get_bytes(void* out, std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw IoError(context_ + ": truncated file (need " + std::to_string(n) + " bytes at offset " +
                    std::to_string(pos_) + ")");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace dmd2::binio
