#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace oat {

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded generator that can be split hierarchically: `rng.fork("dataset").fork(7)`
/// yields a stream that depends only on the root seed and the fork path.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(seed), engine_(splitmix64(seed)) {}

  Rng fork(std::string_view stage) const { return Rng(splitmix64(key_ ^ fnv1a64(stage))); }
  Rng fork(std::uint64_t index) const { return Rng(splitmix64(key_ + 0x632be59bd9b4e019ULL * (index + 1))); }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t next_u64() { return engine_(); }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  /// Uniform integer in [lo, hi].
  long uniform_int(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(engine_); }
  double normal() { return normal_(engine_); }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace oat
