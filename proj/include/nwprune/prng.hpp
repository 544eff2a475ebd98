#pragma once

// Portable seeded randomness. Every random choice in the engine draws from
// this generator so that drop sets can be reproduced from any language:
//
//   SplitMix64:  state += 0x9E3779B97F4A7C15
//                z = state
//                z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//                z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//                return z ^ (z >> 31)
//
//   per-layer stream: SplitMix64(seed ^ fnv1a64(layer_id)), FNV-1a with
//   offset basis 0xCBF29CE484222325 and prime 0x00000100000001B3.
//
//   bounded(n): draw r until r >= (2^64 - n) mod n, return r mod n.
//   uniform01(): (r >> 40) * 2^-24.

#include <cstdint>
#include <string_view>

namespace nwprune {

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x00000100000001B3ULL;
  }
  return h;
}

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Unbiased integer in [0, n); n must be positive.
  constexpr std::uint64_t bounded(std::uint64_t n) noexcept {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

  /// Float in [0, 1) with 24 bits of resolution.
  constexpr float uniform01() noexcept {
    return static_cast<float>(next() >> 40) * 0x1.0p-24f;
  }

  /// Float in [-1, 1).
  constexpr float uniform_sym() noexcept { return 2.0f * uniform01() - 1.0f; }

 private:
  std::uint64_t state_;
};

inline constexpr SplitMix64 layer_stream(std::uint64_t seed, std::string_view layer_id) noexcept {
  return SplitMix64(seed ^ fnv1a64(layer_id));
}

}  // namespace nwprune
