#pragma once

#include <cstdint>
#include <limits>

#include <boost/random/exponential_distribution.hpp>

namespace mpp {

/// Identifies one reproducible random stream: a master seed plus a stream id
/// (the replica index in Monte Carlo fan-outs).
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Independent master seed for a sub-experiment identified by `tag`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t state = seed ^ (tag * 0xD1B54A32D192ED03ULL);
  splitmix64(state);
  return splitmix64(state);
}

/// xoshiro256++ seeded through splitmix64 from (seed, stream_id).
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(RngStream s) {
    std::uint64_t mix = s.stream_id;
    const std::uint64_t stream_key = splitmix64(mix);
    std::uint64_t state = s.seed ^ stream_key;
    for (auto& w : s_) w = splitmix64(state);
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

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Exponential with rate 1 (ziggurat).
  double exponential() { return exp_(*this); }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t s_[4];
  boost::random::exponential_distribution<double> exp_;
};

}  // namespace mpp
