#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace scalenet {

/// Deterministic RNG with platform-stable value mappings. std::mt19937_64 is
/// fully specified by the standard; the distribution helpers below are our
/// own so that sequences are reproducible across compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    return static_cast<int>(uniform() * static_cast<double>(n)) % n;
  }

  /// Standard normal via Box-Muller (uses two uniforms per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent child stream, reproducible from (seed, salt).
  Rng derive(uint64_t salt) const { return Rng(splitmix64(seed_ ^ (salt * 0x9e3779b97f4a7c15ULL))); }

  uint64_t seed() const { return seed_; }

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace scalenet
