#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>

namespace lanetopo {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// Counter-based SplitMix64 stream.
///
/// The stream key is mix64(seed ^ mix64(stream + gamma)); draw i (from 0)
/// is mix64(key + (i + 1) * gamma). Every derived quantity below uses only
/// integer arithmetic and IEEE basic operations plus log/sqrt/cos, so other
/// implementations can reproduce fixtures from this description.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix64(seed ^ mix64(stream + kGoldenGamma))) {}

  std::uint64_t next() noexcept { return mix64(key_ + (++counter_) * kGoldenGamma); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); n must be positive.
  std::size_t index(std::size_t n) noexcept {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }
  /// Uniform integer in [lo, hi].
  std::size_t range(std::size_t lo, std::size_t hi) noexcept { return lo + index(hi - lo + 1); }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Standard normal by Box-Muller; consumes exactly two draws.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t draws() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace lanetopo
