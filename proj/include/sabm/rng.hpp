#pragma once

#include <cstdint>

namespace sabm {

/// Counter-based SplitMix64 stream.
///
/// Draw k (0-based) is mix(seed + (k + 1) * 0x9E3779B97F4A7C15) where mix is
/// the SplitMix64 finalizer:
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   z =  z ^ (z >> 31)
/// The whole stream position is the counter, so checkpoints only need
/// (seed, counter) and results are identical on every platform.
class CounterRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(seed_ + counter_ * kGamma);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

// Conversions from raw 64-bit draws. Kept free so that a replay tape of raw
// values reproduces exactly the same derived numbers.

/// Uniform in [0, 1) with 53 bits of precision.
inline double to_unit(std::uint64_t raw) {
  return static_cast<double>(raw >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n) via multiply-shift. n must be > 0.
inline std::uint64_t to_below(std::uint64_t raw, std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(raw) * n) >> 64);
}

/// Standard normal from two raw draws (Box-Muller, cosine branch).
double to_standard_normal(std::uint64_t raw_a, std::uint64_t raw_b);

}  // namespace sabm
