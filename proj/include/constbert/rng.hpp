#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace constbert {

/// Counter-based generator used everywhere determinism matters (corpus
/// generation, toy token vectors, weight init, shuffling).
///
/// Algorithm: the SplitMix64 finalizer
///   mix(z) = z ^= z >> 30, z *= 0xBF58476D1CE4E5B9,
///            z ^= z >> 27, z *= 0x94D049BB133111EB, z ^= z >> 31
/// applied to (z + 0x9E3779B97F4A7C15). A (seed, stream) pair selects the
/// key = mix(seed) ^ mix(stream + 0x632BE59BD9B4E019), and draw number n
/// returns mix(key + n * 0x9E3779B97F4A7C15). Only integer arithmetic with
/// wrap-around is involved, so sequences are identical on every platform.
/// Real-valued draws use the top 53 bits; Gaussians use Box-Muller with
/// both outputs consumed in order.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed) ^ mix(stream + 0x632BE59BD9B4E019ULL)) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Random access into the stream; does not advance the counter.
  std::uint64_t at(std::uint64_t n) const { return mix(key_ + n * 0x9E3779B97F4A7C15ULL); }

  std::uint64_t next_u64() { return at(counter_++); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) by rejection; n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t position() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// In-place Fisher-Yates shuffle driven by CounterRng.
template <typename Vec>
void shuffle(Vec& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace constbert
