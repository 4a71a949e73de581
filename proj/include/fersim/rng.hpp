// Portable random helpers.
//
// The standard distributions are implementation-defined, so every draw that
// feeds a simulation output goes through the helpers below. Together with
// std::mt19937_64 (whose output sequence is fixed by the standard) this makes
// runs bit-reproducible across standard library vendors.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace fersim {

using Engine = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Folds an ordered list of integers into one well-mixed 64-bit seed.
inline constexpr std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC908ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

/// Purpose tags for derived substreams.
enum class Stream : std::uint64_t {
  kDisplay = 1,
  kPermutation = 2,
  kTrain = 3,
  kMove = 4,
  kPlacement = 5,
  kIdentity = 6,
  kInit = 7,
  kCorpus = 8,
};

/// Independent generator for (run seed, agent, tick, purpose).
inline Engine substream(std::uint64_t seed, std::uint64_t agent, std::uint64_t tick, Stream tag) {
  return Engine(mix_seed({seed, agent, tick, static_cast<std::uint64_t>(tag)}));
}

/// Uniform double in [0, 1) with 53 random bits.
template <class G>
double uniform01(G& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
template <class G>
std::size_t uniform_index(G& rng, std::size_t n) {
  if (n <= 1) {
    rng();
    return 0;
  }
  const std::uint64_t range = n;
  const std::uint64_t threshold = (0 - range) % range;
  for (;;) {
    const unsigned __int128 product = static_cast<unsigned __int128>(rng()) * range;
    if (static_cast<std::uint64_t>(product) >= threshold) {
      return static_cast<std::size_t>(product >> 64);
    }
  }
}

/// Standard normal via Box-Muller; consumes exactly two engine outputs.
template <class G>
double standard_normal(G& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Fisher-Yates shuffle using uniform_index.
template <class It, class G>
void shuffle(It first, It last, G& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    using std::swap;
    swap(first[i - 1], first[j]);
  }
}

}  // namespace fersim
