#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace latfim {

// Counter-based stream derivation: every random stream in the library is keyed
// by a path of integers (master seed, replicate, individual, iteration, ...),
// so results never depend on execution order or thread count.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_key(std::uint64_t key, std::uint64_t value) {
  std::uint64_t state = key ^ (value * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL);
  return splitmix64(state);
}

inline std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t key = mix_key(0x6A09E667F3BCC909ULL, seed);
  for (std::uint64_t v : path) key = mix_key(key, v);
  return key;
}

// xoshiro256++ seeded from a 64-bit stream key.
class StreamEngine {
 public:
  using result_type = std::uint64_t;

  explicit StreamEngine(std::uint64_t key) {
    std::uint64_t sm = key;
    for (auto& w : s_) w = splitmix64(sm);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4];
};

class Rng {
 public:
  explicit Rng(std::uint64_t key) : engine_(key) {}
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
      : engine_(stream_key(seed, path)) {}

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
  // Uniform on (0, 1): never returns 0, so log(uniform()) is finite.
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }
  long poisson(double mean) { return std::poisson_distribution<long>(mean)(engine_); }
  StreamEngine& engine() { return engine_; }

 private:
  StreamEngine engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace latfim
