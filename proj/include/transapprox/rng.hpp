#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace transapprox {

/// Seeded mt19937_64 stream. The engine is fully specified by the standard;
/// every distribution below is implemented here because the standard library
/// distributions are not reproducible across implementations.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64";

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound), bound > 0, rejection-sampled.
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal via Box-Muller (no cached second value).
  double normal();

  /// Child stream derived from this one, for isolating independent consumers.
  Rng split() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace transapprox
