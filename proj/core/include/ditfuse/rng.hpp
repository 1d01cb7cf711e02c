#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace ditfuse {

// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) noexcept {
  return mix64(mix64(seed) ^ mix64(key + 0x632be59bd9b4e019ULL));
}

/// Seeded random stream. Identical seed gives identical draws within one build.
///
/// Distributions are constructed per draw so the engine state alone captures
/// the stream position; this is what makes save/restore exact.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Independent child stream keyed by `key`. Does not advance this stream.
  Rng split(std::uint64_t key) const { return Rng(derive_seed(seed_, key)); }

  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  template <typename It>
  void shuffle(It first, It last) {
    // Fisher-Yates with our own index draws; std::shuffle is not pinned across libraries.
    auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = index(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  std::string serialize() const;
  static Rng deserialize(const std::string& blob);

  bool operator==(const Rng& other) const { return seed_ == other.seed_ && engine_ == other.engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace ditfuse
