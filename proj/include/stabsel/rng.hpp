#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace stabsel {

/// Seeded random source.
///
/// Wraps std::mt19937_64 (whose output sequence is fixed by the standard)
/// and derives every variate from it with explicit formulas instead of the
/// implementation-defined <random> distributions, so a seed produces the
/// same stream with any conforming standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const unsigned __int128 m = static_cast<unsigned __int128>(engine_()) * n;
      if (static_cast<std::uint64_t>(m) >= threshold) {
        return static_cast<std::uint64_t>(m >> 64);
      }
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via the Box-Muller transform (one variate cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Laplace(0, scale) by inverse CDF: with u uniform on (-1/2, 1/2),
  /// eps = -scale * sign(u) * ln(1 - 2|u|).
  double laplace(double scale) {
    double u;
    do {
      u = uniform() - 0.5;
    } while (u == -0.5);
    const double sign = (u > 0) - (u < 0);
    return -scale * sign * std::log1p(-2.0 * std::abs(u));
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// SplitMix64 finalizer; used to derive independent sub-seeds from a run seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(seed ^ mix_seed(stream + 0x632BE59BD9B4E019ULL));
}

}  // namespace stabsel
