#pragma once

#include <cmath>
#include <cstdint>

namespace awmoe::nn {

/// Deterministic splitmix64 generator. The integer stream is pure 64-bit
/// arithmetic and therefore bit-identical across platforms; float helpers
/// derive from the top bits of the stream. See docs/FORMATS.md.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0. The modulo mapping is fixed
  /// as part of the stream contract; bias is negligible for desk-scale n.
  uint64_t below(uint64_t n) { return next_u64() % n; }

  int range_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  /// Standard normal via Box-Muller. Consumes two draws per call (the sine
  /// branch is discarded) so the stream layout stays position-independent.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Derives an independent child stream (e.g. per frame id).
  Rng fork(uint64_t salt) const {
    return Rng(state_ ^ (salt * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  uint64_t state_;
};

}  // namespace awmoe::nn
