#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace deftx {

// FNV-1a 64-bit. Used for model/config digests and file fingerprints;
// not cryptographic.
class Fnv64 {
 public:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

  Fnv64& bytes(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      state_ ^= p[i];
      state_ *= kPrime;
    }
    return *this;
  }

  Fnv64& str(std::string_view s) { return bytes(s.data(), s.size()); }

  Fnv64& u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      state_ ^= static_cast<unsigned char>(v >> (8 * i));
      state_ *= kPrime;
    }
    return *this;
  }

  Fnv64& u32(std::uint32_t v) { return u64(v); }

  Fnv64& f64(double v) { return u64(std::bit_cast<std::uint64_t>(v)); }

  std::uint64_t value() const noexcept { return state_; }

 private:
  std::uint64_t state_ = kOffset;
};

inline std::uint64_t fnv64(std::string_view s) { return Fnv64().str(s).value(); }

}  // namespace deftx
