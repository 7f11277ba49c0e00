#pragma once

#include <cstdint>
#include <cmath>
#include <random>

#include "qbipw/math.hpp"

namespace qbipw {

// Deterministic random source. The engine is mt19937_64, whose output
// sequence is fixed by the standard; all variate transforms are implemented
// here by inverse CDF so that streams are reproducible across platforms and
// standard library versions.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // splitmix64 mix of (seed, stream), used to derive independent child
  // streams: replicate seeds, bootstrap replicate seeds, sub-draws.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1), never exactly 0 or 1; safe as a quantile argument.
  double uniform_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_quantile(uniform_open()); }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Exponential with rate 1 by inverse CDF.
  double exponential() { return -std::log1p(-uniform()); }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer on [0, bound), bound >= 1, unbiased (rejection).
  std::uint64_t integer(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

private:
  std::mt19937_64 engine_;
};

}  // namespace qbipw
