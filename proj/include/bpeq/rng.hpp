#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace bpeq {

// Seeded RNG for the simulator. Distribution transforms are implemented here
// rather than with std:: distributions so that a (config, seed) pair replays
// the same stream regardless of standard library version.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Knuth multiplication method; normal approximation for large means.
  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean > 30.0) {
      const double n = std::round(mean + std::sqrt(mean) * normal01());
      return n < 0.0 ? 0 : static_cast<int>(n);
    }
    const double limit = std::exp(-mean);
    int k = 0;
    double product = 1.0;
    do {
      ++k;
      product *= uniform01();
    } while (product > limit);
    return k - 1;
  }

  double normal01() {
    // Box-Muller; consumes two uniforms per call, no cached spare.
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // Index drawn proportionally to non-negative weights; final bucket absorbs
  // rounding. Weights must not all be zero.
  std::size_t pick_weighted(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = uniform01() * total;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      r -= weights[i];
      if (r < 0.0) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

 private:
  std::mt19937_64 engine_;
};

} // namespace bpeq
