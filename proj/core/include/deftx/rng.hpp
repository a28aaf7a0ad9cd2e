#pragma once

#include <cstdint>
#include <string_view>

#include "deftx/digest.hpp"

namespace deftx {

// Counter-based deterministic generator (splitmix64): draw i is a pure
// function of (seed, i), so equal seeds give equal streams on every
// platform. Normal draws go through Box-Muller and additionally depend
// on the platform's libm; everything else is pure integer arithmetic.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * ++counter_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 bits of mantissa.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n); rejection sampling, no modulo bias.
  std::uint64_t next_below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t rem = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t v = next_u64();
      if (rem == 0 || v < 0 - rem) return v % n;
    }
  }

  // Standard normal via Box-Muller; draws uniforms in pairs.
  double next_normal();

  // Independent child stream for a named purpose (head re-init, eval
  // masking, ...). Pure function of (seed, tag).
  Rng fork(std::string_view tag) const {
    std::uint64_t z = seed_ ^ fnv64(tag);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

  // Indexed child stream, e.g. one per training step.
  Rng fork(std::string_view tag, std::uint64_t index) const {
    std::uint64_t z = seed_ ^ fnv64(tag) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace deftx
