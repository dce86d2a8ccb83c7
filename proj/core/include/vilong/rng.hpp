#pragma once

// Counter-based pseudo-random generator (splitmix64). Hand-rolled rather than
// <random> so that a given seed produces the same draw sequence on every
// platform and standard library.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

namespace vilong {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection keeps the distribution exact when n
  // does not divide 2^64.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::next_below: n must be positive");
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller; the second variate of each pair is cached
  // so draws stay a pure function of the counter state.
  double next_normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    // Guard against log(0) by shifting the 53-bit uniform into (0, 1].
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // N(0, stddev^2) truncated to [-2 stddev, 2 stddev] by rejection.
  double next_trunc_normal(double stddev) {
    if (!(stddev > 0.0)) throw std::invalid_argument("Rng::next_trunc_normal: stddev must be > 0");
    for (;;) {
      double z = next_normal();
      if (z >= -2.0 && z <= 2.0) return z * stddev;
    }
  }

 private:
  std::uint64_t state_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace vilong
