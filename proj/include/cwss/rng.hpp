#pragma once

#include <cstdint>
#include <random>

namespace cwss {

/// Deterministic random source. Wraps std::mt19937_64 (whose output sequence
/// is pinned by the standard) and derives uniform/normal variates with fixed
/// arithmetic, so identical seeds reproduce identical streams on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0,1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(uniform() * (static_cast<double>(hi) - lo + 1.0));
  }

  // Box-Muller; two uniforms per variate, no cached spare.
  double normal();
  float normal_f(float mean, float stddev) {
    return mean + stddev * static_cast<float>(normal());
  }

  /// Independent stream derived from (seed, stream) via splitmix64 mixing;
  /// lets parallel consumers draw reproducibly regardless of scheduling.
  static Rng fork(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 gen_;
};

}  // namespace cwss
