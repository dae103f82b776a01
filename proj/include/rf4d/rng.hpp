#pragma once

#include <cmath>
#include <cstdint>

namespace rf4d {

/// splitmix64 step: advances the state and returns a mixed 64-bit word.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from (seed, salt). Used for per-frame
/// and per-beam streams so frames/beams can be generated in parallel without
/// changing results.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t s = seed ^ (salt * 0xD1B54A32D192ED03ULL + 0x9E3779B97F4A7C15ULL);
  splitmix64(s);
  return splitmix64(s);
}

/// Deterministic PRNG with explicit algorithms, so streams are reproducible
/// independent of the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Warm up so small seeds decorrelate.
    splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (two uniforms per draw, no caching).
  double normal() {
    double u1 = uniform();
    if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Standard Gumbel: -log(-log u).
  double gumbel() {
    double u = uniform();
    if (u < 0x1.0p-53) u = 0x1.0p-53;
    return -std::log(-std::log(u));
  }

 private:
  std::uint64_t state_;
};

}  // namespace rf4d
