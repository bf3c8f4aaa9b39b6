#pragma once

// Seeded, splittable random number generation.
//
// Generator: xoshiro256++ (Blackman & Vigna), seeded through splitmix64.
// Uniform doubles take the top 53 bits of one 64-bit draw, giving [0, 1).
// Standard normals use the Box-Muller transform on paired uniforms with
// no spare caching: a request for n normals always consumes 2*ceil(n/2)
// uniform draws, so the stream position after any call is well defined.
// Same seed + same call sequence => identical values on every platform.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace agm {

class Rng {
 public:
  Rng() : Rng(0) {}

  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) {
      word = splitmix64(sm);
    }
  }

  // Independent stream `stream_id` of the generator family rooted at `seed`.
  // Streams with distinct ids never share draws.
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t sm = seed;
    std::uint64_t a = splitmix64(sm);
    sm ^= 0x9E3779B97F4A7C15ull * (stream_id + 1);
    std::uint64_t b = splitmix64(sm);
    return Rng(a ^ b);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1).
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  void fill_uniform01(std::span<double> out) {
    for (double& v : out) {
      v = uniform01();
    }
  }

  // Standard normals, two per Box-Muller pair. Odd-length requests compute
  // a final pair and discard its second variate.
  void fill_normal(std::span<double> out) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    std::size_t i = 0;
    while (i < out.size()) {
      const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
      const double u2 = uniform01();
      const double r = std::sqrt(-2.0 * std::log(u1));
      out[i] = r * std::cos(two_pi * u2);
      if (i + 1 < out.size()) {
        out[i + 1] = r * std::sin(two_pi * u2);
      }
      i += 2;
    }
  }

  double normal() {
    double v[1];
    fill_normal(v);
    return v[0];
  }

  std::array<std::uint64_t, 4> state() const { return state_; }

  static Rng from_state(const std::array<std::uint64_t, 4>& s) {
    Rng r;
    r.state_ = s;
    return r;
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

// Stream ids used across the project so that independent concerns never
// consume from the same stream.
namespace streams {
inline constexpr std::uint64_t kDriftInit = 0;
inline constexpr std::uint64_t kPotentialInit = 1;
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kBridge = 3;
inline constexpr std::uint64_t kNoise = 4;
inline constexpr std::uint64_t kEval = 5;
inline constexpr std::uint64_t kSampler = 6;
inline constexpr std::uint64_t kProjections = 7;
}  // namespace streams

}  // namespace agm
