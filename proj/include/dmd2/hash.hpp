#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace dmd2 {

// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes) {
    for (std::uint8_t b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001B3ULL;
    }
  }
  void update(std::string_view text) {
    update({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view text) {
  Fnv1a h;
  h.update(text);
  return h.digest();
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dmd2
