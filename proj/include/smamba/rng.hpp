#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace smamba {

// splitmix64 finalizer (Steele, Lea, Flood 2014 constants).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

// Counter-based generator: draw i of stream `key` is mix64(key + i * gamma).
// The full state is (key, counter), so any position can be reproduced and
// independent streams are derived with fork().
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t key = 0, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  constexpr std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGoldenGamma); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, one normal per two uniforms (no cached spare).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  constexpr CounterRng fork(std::uint64_t stream) const {
    return CounterRng(mix64(key_ ^ mix64(stream + kGoldenGamma)));
  }

  constexpr std::uint64_t key() const { return key_; }
  constexpr std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace smamba
