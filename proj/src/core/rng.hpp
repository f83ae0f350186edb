#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace solid {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; mixes a stream index into a parent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t index) {
  return Rng(derive_seed(seed, index));
}

/// Box-Muller standard normal; independent of the library's distribution internals.
class Gaussian {
 public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    constexpr double two_pi = 6.283185307179586476925286766559;
    double u1 = 0.0;
    do {
      u1 = to_unit(rng());
    } while (u1 <= 0.0);
    const double u2 = to_unit(rng());
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

 private:
  static double to_unit(std::uint64_t bits) { return double(bits >> 11) * 0x1.0p-53; }

  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Uniform integer in [lo, hi] by rejection, stable across standard libraries.
inline std::uint64_t uniform_int(Rng& rng, std::uint64_t lo, std::uint64_t hi) {
  const std::uint64_t span = hi - lo + 1;
  if (span == 0) return rng();
  const std::uint64_t limit = std::uint64_t(-1) - (std::uint64_t(-1) % span);
  std::uint64_t x = 0;
  do {
    x = rng();
  } while (x >= limit);
  return lo + x % span;
}

}  // namespace solid
