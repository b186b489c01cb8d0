#pragma once

#include <cstdint>
#include <random>

namespace derauth {

// splitmix64 finalizer; wrapping 64-bit arithmetic.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

using Rng = std::mt19937_64;

// Unbiased draw in [0, bound) from the raw engine output. Avoids
// std::uniform_int_distribution so sampled values are stable across
// standard library implementations.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

}  // namespace derauth
