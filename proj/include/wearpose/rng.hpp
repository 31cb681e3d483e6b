#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace wearpose {

/// Seedable random source with hand-rolled distributions.
///
/// std::mt19937_64 output is pinned by the standard, but the standard
/// distribution objects are implementation-defined, so reproducible runs
/// roll their own transforms on top of the raw engine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller; one value per call, no caching so the
  /// consumption pattern stays obvious.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Derives an independent child stream; the salt keeps parallel work items
  /// (batch elements, trajectories) decorrelated but reproducible.
  Rng fork(std::uint64_t salt) {
    return Rng(mix(engine_(), salt));
  }

  /// Deterministic stream id from (seed, salt) without consuming this engine.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
    return mix(seed, salt);
  }

 private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
};

}  // namespace wearpose
