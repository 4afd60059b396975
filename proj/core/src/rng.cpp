// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/rng.hpp"

#include <cmath>
#include <numbers>

namespace wxpeft {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t basis) noexcept {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = basis;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  return fnv1a64(bytes.data(), bytes.size());
}

CounterRng::CounterRng(std::uint64_t seed, std::string_view stream, std::uint64_t counter) noexcept
    : key_(splitmix64(splitmix64(seed) ^ splitmix64(fnv1a64(stream)) ^
                      splitmix64(counter + 0x632BE59BD9B4E019ULL))) {}

std::uint64_t CounterRng::bits(std::uint64_t index) const noexcept {
  return splitmix64(key_ ^ splitmix64(index));
}

double CounterRng::uniform(std::uint64_t index) const noexcept {
  return static_cast<double>(bits(index) >> 11) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t index) const noexcept {
  const double u1 = 1.0 - uniform(2 * index);  // (0, 1]
  const double u2 = uniform(2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::truncated_normal(double std) noexcept {
  for (;;) {
    const double z = normal();
    if (std::abs(z) <= 2.0) return z * std;
  }
}

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
  // Multiply-shift; bias is < 2^-40 for the sizes used here.
  const unsigned __int128 prod =
      static_cast<unsigned __int128>(rng_.bits(next_++)) * static_cast<unsigned __int128>(n);
  return static_cast<std::uint64_t>(prod >> 64);
}

}  // namespace wxpeft
