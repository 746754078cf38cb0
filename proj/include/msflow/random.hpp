#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "msflow/error.hpp"
#include "msflow/tensor.hpp"

namespace msf {

namespace detail {
// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

// Counter-based stream: draw k is a pure function of (key, k), so a stream can
// be split into independent substreams without sharing state.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) : seed_(seed), key_(detail::mix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    return detail::mix64(key_ ^ detail::mix64(counter_++ + 0x632BE59BD9B4E019ull));
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), rejection sampled so every value is equally likely.
  std::uint64_t uniform_index(std::uint64_t n) {
    require(n > 0, "uniform_index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  // Box-Muller, cosine branch only so each normal consumes exactly two uniforms.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) {
    require(p >= 0.0 && p <= 1.0, "bernoulli: p must lie in [0,1], got " + std::to_string(p));
    return uniform() < p;
  }

  // Independent substream; does not advance this stream.
  RandomStream split(std::uint64_t index) const noexcept {
    return RandomStream(detail::mix64(key_ + detail::mix64(index ^ 0xD1B54A32D192ED03ull)));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

enum class Distribution { uniform, standard_normal, bernoulli };

inline Tensor draw(RandomStream& stream, Distribution dist, const Shape& shape, double p = 0.5) {
  if (dist == Distribution::bernoulli)
    require(p >= 0.0 && p <= 1.0, "draw: bernoulli p must lie in [0,1], got " + std::to_string(p));
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (dist) {
      case Distribution::uniform: out[i] = stream.uniform(); break;
      case Distribution::standard_normal: out[i] = stream.normal(); break;
      case Distribution::bernoulli: out[i] = stream.uniform() < p ? 1.0 : 0.0; break;
    }
  }
  return out;
}

}  // namespace msf
