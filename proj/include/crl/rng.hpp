#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace crl {

/// Avalanche finalizer: two multiply-xor-shift rounds (splitmix64 mixer).
/// Bijective on 64-bit words, so distinct inputs never collide.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Counter-based seed derivation for task fan-out. For a fixed master the map
/// task_index -> seed is injective (odd multiplier, then a bijective mixer),
/// and the mixer's avalanche decorrelates neighbouring counters.
inline std::uint64_t split_seed(std::uint64_t master, std::uint64_t task_index) {
  return mix64(master + 0x9E3779B97F4A7C15ull * (task_index + 1));
}

/// Seeded scalar generator. The engine is mt19937_64 (bit-exact by the
/// standard); uniform and normal transforms are spelled out here rather than
/// taken from <random> distributions, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on (0, 1]. The +1 keeps log() finite in Box-Muller.
  double uniform01() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  /// Uniform on [a, b).
  double uniform(double a, double b) {
    double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return a + (b - a) * u;
  }

  /// Standard normal via Box-Muller; the second deviate of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  void normal_fill(std::vector<double>& out) {
    for (double& x : out) x = normal();
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace crl
