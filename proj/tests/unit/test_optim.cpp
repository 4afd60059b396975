// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "wxpeft/error.hpp"
#include "wxpeft/optim.hpp"

namespace wxpeft {
namespace {

TEST(AdamW, FirstStepMatchesHandValue) {
  ParamStore store;
  store.add("w", Tensor({1}, {1.0}), ParamGroup::backbone);
  AdamW opt(store);
  GradList grads{Tensor({1}, {0.5})};
  EXPECT_EQ(opt.step(store, grads, 0.1), 1u);
  EXPECT_NEAR(store.value(0)[0], 0.895000002, 1e-15);
  EXPECT_DOUBLE_EQ(opt.first_moment(0)[0], (1.0 - 0.9) * 0.5);
  EXPECT_DOUBLE_EQ(opt.second_moment(0)[0], (1.0 - 0.999) * 0.25);
}

TEST(AdamW, TrajectoryMatchesScalarOracle) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.05;
  const std::vector<double> g_seq{0.5, -1.0, 0.25, 2.0, -0.125};
  const std::vector<double> lr_seq{0.1, 0.05, 0.02, 0.3, 0.01};
  ParamStore store;
  store.add("w", Tensor({2}, {1.0, -3.0}), ParamGroup::backbone);
  AdamW opt(store);
  double p[2] = {1.0, -3.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (std::size_t t = 0; t < g_seq.size(); ++t) {
    const double g[2] = {g_seq[t], -2.0 * g_seq[t]};
    for (int i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t + 1.0));
      const double vh = v[i] / (1 - std::pow(b2, t + 1.0));
      p[i] = p[i] - lr_seq[t] * wd * p[i] - lr_seq[t] * mh / (std::sqrt(vh) + eps);
    }
    GradList grads{Tensor({2}, {g[0], g[1]})};
    opt.step(store, grads, lr_seq[t]);
    EXPECT_NEAR(store.value(0)[0], p[0], 1e-14);
    EXPECT_NEAR(store.value(0)[1], p[1], 1e-14);
  }
  EXPECT_EQ(opt.steps(), g_seq.size());
}

TEST(AdamW, FrozenAndGradlessEntriesAreUntouched) {
  ParamStore store;
  store.add("a", Tensor({2}, {1.0, 2.0}), ParamGroup::backbone, false);
  store.add("b", Tensor({1}, {3.0}), ParamGroup::head);
  store.add("c", Tensor({1}, {4.0}), ParamGroup::head);
  AdamW opt(store);
  GradList grads{Tensor({2}, {1.0, 1.0}), std::nullopt, Tensor({1}, {1.0})};
  EXPECT_EQ(opt.step(store, grads, 0.1), 1u);
  EXPECT_EQ(store.value(0)[0], 1.0);
  EXPECT_EQ(store.value(1)[0], 3.0);
  EXPECT_NE(store.value(2)[0], 4.0);
}

TEST(AdamW, MaskedCoordinatesKeepValueAndMoments) {
  ParamStore store;
  store.add("w", Tensor({3}, {1.0, 2.0, 3.0}), ParamGroup::backbone);
  AdamW opt(store);
  const FlatLayout layout = store.layout([](const ParamEntry&) { return true; });
  const std::vector<std::uint8_t> mask{1, 0, 1};
  GradList grads{Tensor({3}, {1.0, 1.0, 1.0})};
  EXPECT_EQ(opt.step(store, grads, 0.1, &layout, &mask), 2u);
  EXPECT_EQ(store.value(0)[1], 2.0);
  EXPECT_EQ(opt.first_moment(0)[1], 0.0);
  EXPECT_EQ(opt.second_moment(0)[1], 0.0);
  EXPECT_NE(store.value(0)[0], 1.0);
  const std::vector<std::uint8_t> short_mask{1};
  EXPECT_THROW(opt.step(store, grads, 0.1, &layout, &short_mask), ContractError);
  EXPECT_THROW(opt.step(store, grads, 0.1, &layout, nullptr), ContractError);
}

TEST(AdamW, StateNamesTrainableEntries) {
  ParamStore store;
  store.add("a", Tensor({1}), ParamGroup::backbone, false);
  store.add("b", Tensor({2}), ParamGroup::head);
  const AdamW opt(store);
  const auto state = opt.state(store);
  ASSERT_EQ(state.size(), 3u);
  EXPECT_EQ(state[0].name, "b.opt.m");
  EXPECT_EQ(state[1].name, "b.opt.v");
  EXPECT_EQ(state[2].name, "opt.step");
}

}  // namespace
}  // namespace wxpeft
