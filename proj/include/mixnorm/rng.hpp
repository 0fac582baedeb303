#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace mixnorm {

// Deterministic seeded random stream (xoshiro256** core, splitmix64 seeding).
// We roll our own bounded-int and real draws so sequences do not depend on
// standard-library distribution internals.
//
// A stream is single-owner: never share one across concurrent users, derive
// child streams with split() instead. split() is a pure function of the
// construction seed and the label, so it neither consumes draws nor is
// affected by them.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, bound), unbiased via rejection. bound must be > 0.
  std::uint64_t uniform_below(std::uint64_t bound);

  // Uniform integer in the inclusive range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Uniform real in [0, 1) with 53 random bits.
  double uniform_real();

  // Standard normal via Box-Muller (second value cached).
  double normal();

  // Child stream independent of this stream's past and future draws.
  RngStream split(std::string_view label) const;

  std::uint64_t seed() const noexcept { return seed_; }

  // Fisher-Yates shuffle of a random-access range.
  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t j = uniform_below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

private:
  std::array<std::uint64_t, 4> state_{};
  std::uint64_t seed_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace mixnorm
