#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace latent_atlas {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Combines a base seed with a tag, so that independent random streams can be
/// derived from one experiment seed (per target, per space, per module).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t s = base ^ (0x6a09e667f3bcc909ULL + tag * 0x9e3779b97f4a7c15ULL);
  return detail::splitmix64(s);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  // FNV-1a over the tag, then mixed with the base.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(base, h);
}

/// Seeded random source. The uniform and Gaussian transforms are implemented
/// here (not via std::*_distribution) so that streams are identical across
/// standard libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(detail::splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Modulo bias is negligible for the n used here (n << 2^64).
    return engine_() % n;
  }

  /// Standard normal via Box-Muller; one spare value is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  /// Independent child stream identified by a tag.
  Rng child(std::uint64_t tag) { return Rng(derive_seed(engine_(), tag)); }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace latent_atlas
