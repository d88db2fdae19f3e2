#pragma once

// Portable pseudorandom utilities.
//
// All randomness in the library flows through Rng, a thin wrapper around
// std::mt19937_64. The engine's output sequence is fixed by the C++ standard,
// but std::uniform_int_distribution and std::normal_distribution are not, so
// bounded integers and Gaussians are derived here by hand. Results therefore
// replicate bit-for-bit across compilers and standard libraries.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace disco {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent stream derived from (seed, stream). Streams let one run keep
  // its batch order untouched while other consumers draw numbers.
  static Rng stream(std::uint64_t seed, std::uint64_t stream) {
    return Rng(mix(seed ^ mix(stream + 0x9E3779B97F4A7C15ULL)));
  }

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n) by rejection sampling (no modulo bias).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t r = next();
    while (r >= limit) r = next();
    return r % n;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stream identifiers used by the engine and scenario builders.
namespace streams {
inline constexpr std::uint64_t kClassOrder = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kBatches = 3;
inline constexpr std::uint64_t kBuffer = 4;
inline constexpr std::uint64_t kContrast = 5;
inline constexpr std::uint64_t kData = 6;
inline constexpr std::uint64_t kTransform = 7;
inline constexpr std::uint64_t kExpand = 8;
}  // namespace streams

// FNV-1a, used for config and architecture hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t size,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace disco
