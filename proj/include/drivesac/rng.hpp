#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

// Deterministic random stream with pinned conversion algorithms. The standard
// distributions are implementation-defined, so uniform and normal draws are
// spelled out here to keep byte-identical reproducibility under our control.

namespace drivesac {

struct RandomStream {
  std::mt19937_64 engine;
  bool has_spare = false;
  double spare = 0.0;

  explicit RandomStream(std::uint64_t seed) : engine(seed) {}

  // uniform in [0, 1), 53-bit resolution
  double u01() { return (engine() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // standard normal via Box-Muller with a cached spare
  double normal() {
    if (has_spare) {
      has_spare = false;
      return spare;
    }
    const double u1 = 1.0 - u01();  // (0, 1], keeps log finite
    const double u2 = u01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare = r * std::sin(a);
    has_spare = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // uniform integer in [0, n), rejection-sampled to avoid modulo bias
  std::uint64_t randint(std::uint64_t n) {
    const std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine();
    } while (x >= lim);
    return x % n;
  }

  // stable sub-seed derivation (splitmix64 over the xor of seed and tag)
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed ^ (tag + 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
};

}  // namespace drivesac
