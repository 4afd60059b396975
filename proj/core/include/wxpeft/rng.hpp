// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

namespace wxpeft {

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

/// Counter-based random stream. Every draw is a pure function of
/// (seed, stream name, counter, index), so replays are bit-identical and
/// independent sub-streams never share state.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::string_view stream, std::uint64_t counter = 0) noexcept;

  std::uint64_t bits(std::uint64_t index) const noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform(std::uint64_t index) const noexcept;
  /// Standard normal via Box-Muller on draws (2i, 2i+1).
  double normal(std::uint64_t index) const noexcept;

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
};

/// Sequential reader over a CounterRng.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view stream, std::uint64_t counter = 0) noexcept
      : rng_(seed, stream, counter) {}

  double uniform() noexcept { return rng_.uniform(next_++); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept { return rng_.normal(next_++); }
  /// Normal(0, std) truncated to +-2 std by resampling.
  double truncated_normal(double std) noexcept;
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

 private:
  CounterRng rng_;
  std::uint64_t next_ = 0;
};

}  // namespace wxpeft
