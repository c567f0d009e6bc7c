// Seed derivation and deterministic random draws.
//
// All randomness in the library flows through this header. The engine is
// std::mt19937_64 (exact output sequence fixed by the standard) and every
// distribution transform is hand-rolled, so a given seed produces the same
// bits on every platform and standard library.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace fedsim {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

// Labels for independent random streams derived from one base seed.
enum class StreamTag : std::uint64_t {
  dataset = 1,
  partition = 2,
  kmeans = 3,
  noise = 4,
  init = 5,
  sampling = 6,
  local = 7,
  dropout = 8,
  fdcheck = 9,
};

// Avalanche mix of (base, tag, a, b) into a stream seed. Word order matters,
// so (round, client) and (client, round) never collide.
inline std::uint64_t derive_seed(std::uint64_t base, StreamTag tag,
                                 std::uint64_t a = 0,
                                 std::uint64_t b = 0) noexcept {
  std::uint64_t s = mix64(base + 0x9e3779b97f4a7c15ULL);
  s = mix64(s ^ (static_cast<std::uint64_t>(tag) + 0x9e3779b97f4a7c15ULL));
  s = mix64(s ^ (a + 0xbf58476d1ce4e5b9ULL));
  s = mix64(s ^ (b + 0x94d049bb133111ebULL));
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform in (0, 1]; never returns zero, safe under log().
  double uniform_pos() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = engine_();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller. No spare caching: every call consumes
  // exactly two engine outputs, which keeps draw positions predictable.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Gamma(shape, 1) by Marsaglia-Tsang; shapes below 1 are boosted.
  double gamma(double shape) {
    if (!(shape > 0.0) || !std::isfinite(shape))
      throw std::invalid_argument("Rng::gamma: shape must be positive and finite");
    if (shape < 1.0) {
      const double u = uniform_pos();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fedsim
