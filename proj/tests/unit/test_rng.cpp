// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "wxpeft/rng.hpp"

namespace {

using wxpeft::CounterRng;
using wxpeft::RngStream;

TEST(Rng, Fnv1aKnownVectors) {
  // Published FNV-1a 64 test vectors.
  EXPECT_EQ(wxpeft::fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(wxpeft::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(wxpeft::fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Rng, SplitMixReferenceValue) {
  // First output of the reference splitmix64 generator seeded with 0.
  EXPECT_EQ(wxpeft::splitmix64(0), 0xe220a8397b1dcdafULL);
}

TEST(Rng, DrawsArePureFunctionsOfTheKey) {
  CounterRng a(42, "stream"), b(42, "stream"), c(42, "other"), d(43, "stream");
  EXPECT_EQ(a.bits(7), b.bits(7));
  EXPECT_NE(a.bits(7), c.bits(7));
  EXPECT_NE(a.bits(7), d.bits(7));
  EXPECT_NE(CounterRng(42, "stream", 1).bits(7), a.bits(7));
}

TEST(Rng, UniformMomentsAndRange) {
  CounterRng r(1, "u");
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform(i);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sum2 += u * u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
  EXPECT_NEAR(sum2 / n - (sum / n) * (sum / n), 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalMoments) {
  RngStream r(3, "n");
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sum2 += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sum2 / n, 1.0, 0.02);
}

TEST(Rng, TruncatedNormalBounded) {
  RngStream r(5, "t");
  for (int i = 0; i < 10000; ++i) ASSERT_LE(std::abs(r.truncated_normal(0.02)), 0.04);
}

TEST(Rng, BelowCoversRange) {
  RngStream r(9, "b");
  int counts[5] = {};
  for (int i = 0; i < 50000; ++i) ++counts[r.below(5)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

}  // namespace
