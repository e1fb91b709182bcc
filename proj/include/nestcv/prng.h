#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace nestcv {

// splitmix64 finalizer (the xor-shift-multiply output stage).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// FNV-1a, 64 bit, over raw bytes.
constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Top 53 bits of a 64-bit word as a double in [0, 1).
constexpr double unit_interval(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// splitmix64. Every random decision in the engine goes through this type so
// partitions, samples, and initializations reproduce bit-exactly on any
// platform.
class DeterministicPrng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit constexpr DeterministicPrng(std::uint64_t seed) : state_(seed) {}

  // Independent stream `stream` of a seed: its initial state is output number
  // `stream` (0-based) of splitmix64 seeded with `seed`.
  static constexpr DeterministicPrng for_stream(std::uint64_t seed,
                                                std::uint64_t stream) {
    return DeterministicPrng(mix64(seed + kGamma * (stream + 1)));
  }

  constexpr std::uint64_t next() {
    state_ += kGamma;
    return mix64(state_);
  }

  // Uniform integer in [0, bound). Rejection sampling, so no modulo bias.
  constexpr std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  constexpr double uniform() { return unit_interval(next()); }

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  constexpr std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace nestcv
