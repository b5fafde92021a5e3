#pragma once

#include <cstdint>
#include <random>

namespace uavpd {

// Deterministic RNG used everywhere instead of std distributions, whose
// output sequences are implementation-defined. mt19937_64 raw output is
// pinned by the standard, and the value transforms below are ours, so a
// given seed yields the same stream on every build.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive. Modulo bias is negligible for
  // the small ranges used here.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(engine_() % static_cast<uint64_t>(hi - lo + 1));
  }

  bool bernoulli(double p = 0.5) { return uniform() < p; }

  // Box-Muller without caching so the call count per draw is fixed.
  double normal() {
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Child generator with an independent stream, for per-image / per-run
  // parallel determinism.
  Rng fork(uint64_t stream_id) {
    uint64_t z = next_u64() ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace uavpd
