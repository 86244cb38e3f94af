#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace tcri::rng {

// Deterministic random source. The engine is std::mt19937_64 (bit-exact per
// the standard); all distribution transforms are written out here instead of
// using std::*_distribution, whose output is implementation-defined. Identical
// seeds therefore give identical streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Exponential with the given *scale* (mean = scale).
  double exponential(double scale) {
    double u = uniform01();
    return -scale * std::log1p(-u);
  }

  // Box-Muller; the spare value is cached.
  double normal(double mean = 0.0, double stddev = 1.0);

  bool bernoulli(double p) { return uniform01() < p; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tcri::rng
