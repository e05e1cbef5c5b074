#pragma once

#include <cmath>
#include <cstdint>

namespace cmalab {

/// Counter-based PRNG: output i is a stateless hash of (key, i), so a stream
/// never mutates shared state and any draw can be replayed from its key.
/// Substreams are derived by re-keying, which keeps parallel runs on disjoint,
/// individually reproducible streams.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

  /// Stream `index` of the family rooted at `seed`.
  static CounterRng substream(std::uint64_t seed, std::uint64_t index) noexcept {
    return CounterRng(mix(seed + 0x9E3779B97F4A7C15ULL * (index + 1)));
  }

  std::uint64_t next_u64() noexcept {
    counter_ += 0x9E3779B97F4A7C15ULL;
    return mix(key_ ^ counter_);
  }

  /// Uniform on [0, 1) with 53-bit resolution.
  double next_double() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * next_double();
  }

  /// Uniform integer on [0, n).
  std::uint64_t next_below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller; pairs are cached.
  double normal() noexcept {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) noexcept {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cmalab
