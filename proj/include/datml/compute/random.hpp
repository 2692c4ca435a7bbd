#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

#include "datml/compute/scalar.hpp"

namespace datml::inline DATML_ABI {

// mt19937_64 is fully specified by the standard; the distributions are not, so
// the helpers below derive values from raw engine output to stay reproducible
// across standard libraries.
using Rng = std::mt19937_64;

/// Uniform double in the open interval (0, 1).
inline double uniform01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Unbiased integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Standard Gumbel(0, 1) sample.
inline double gumbel(Rng& rng) { return -std::log(-std::log(uniform01(rng))); }

/// Zero-mean normal via Box-Muller.
inline double normal(Rng& rng, double stddev) {
  const double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Seed for a derived stream, so independent consumers never share a state.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace datml::inline DATML_ABI
