// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "wxpeft/backbone.hpp"
#include "wxpeft/error.hpp"
#include "wxpeft/ops.hpp"

namespace wxpeft {
namespace {

ModelConfig toy(std::size_t in_vars = 3, std::size_t out_vars = 3) {
  ModelConfig c;
  c.in_vars = in_vars;
  c.out_vars = out_vars;
  c.height = 32;
  c.width = 32;
  return c;
}

TEST(Backbone, ParameterCountsMatchHandCounts) {
  const ModelConfig c = toy();
  EXPECT_EQ(embedding_param_count(c), 1568u);
  EXPECT_EQ(block_param_count(c), 12704u);
  EXPECT_EQ(head_param_count(c), 1584u);
  EXPECT_EQ(model_param_count(c), 53968u);
  const Model m(c, 1);
  EXPECT_EQ(m.params().numel(), 53968u);
  EXPECT_EQ(m.params().numel(ParamGroup::embedding), 1568u);
  EXPECT_EQ(m.params().numel(ParamGroup::backbone), 4u * 12704u);
  EXPECT_EQ(m.params().numel(ParamGroup::head), 1584u);
}

TEST(Backbone, CountsHoldForOtherShapes) {
  ModelConfig c = toy(5, 2);
  c.dim = 16;
  c.depth = 3;
  c.heads = 4;
  c.mlp_ratio = 2;
  c.patch = 8;
  const Model m(c, 2);
  EXPECT_EQ(m.params().numel(), model_param_count(c));
  EXPECT_EQ(m.params().numel(ParamGroup::backbone), 3 * block_param_count(c));
}

TEST(Backbone, PositionEncodingValues) {
  const Tensor pe = sinusoidal_encoding(3, 4);
  EXPECT_EQ(pe.at({0, 0}), 0.0);
  EXPECT_EQ(pe.at({0, 1}), 1.0);
  EXPECT_NEAR(pe.at({1, 0}), std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe.at({1, 1}), std::cos(1.0), 1e-15);
  EXPECT_NEAR(pe.at({2, 2}), std::sin(2.0 / 100.0), 1e-15);
  EXPECT_NEAR(pe.at({2, 3}), std::cos(2.0 / 100.0), 1e-15);
}

TEST(Backbone, InvalidConfigsRaiseConfigError) {
  ModelConfig c = toy();
  c.heads = 3;
  EXPECT_THROW(Model(c, 1), ConfigError);
  c = toy();
  c.height = 30;
  EXPECT_THROW(Model(c, 1), ConfigError);
  c = toy();
  c.in_vars = 0;
  EXPECT_THROW(Model(c, 1), ConfigError);
}

TEST(Backbone, InitializationIsDeterministicAndSeeded) {
  const Model a(toy(), 7), b(toy(), 7), other(toy(), 8);
  ASSERT_EQ(a.params().size(), b.params().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_TRUE(a.params().value(i).bit_equal(b.params().value(i))) << a.params().entry(i).name;
    any_diff = any_diff || !a.params().value(i).bit_equal(other.params().value(i));
  }
  EXPECT_TRUE(any_diff);
}

TEST(Backbone, InitialWeightsAreTruncated) {
  const Model m(toy(), 3);
  const Tensor& w = m.params().value(m.block(0).fc1_weight);
  double s2 = 0.0;
  for (double v : w.data()) {
    EXPECT_LE(std::abs(v), 0.04 + 1e-15);
    s2 += v * v;
  }
  EXPECT_NEAR(std::sqrt(s2 / static_cast<double>(w.numel())), 0.0176, 0.002);
  for (double v : m.params().value(m.block(0).norm1_weight).data()) EXPECT_EQ(v, 1.0);
  for (double v : m.params().value(m.block(0).fc1_bias).data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, ForwardShapeAndPredictAgree) {
  const Model m(toy(3, 2), 4);
  const Tensor x = testing::random_tensor({3, 32, 32}, 4, "x");
  ad::Graph g;
  Binder bind(g, m.params());
  const Tensor y = m.forward(bind, g.constant(x)).value();
  EXPECT_EQ(y.shape(), (Shape{2, 32, 32}));
  EXPECT_TRUE(y.bit_equal(m.predict(x)));
  EXPECT_TRUE(y.all_finite());
}

TEST(Backbone, WrongInputShapeThrows) {
  const Model m(toy(), 4);
  EXPECT_THROW(m.predict(Tensor({2, 32, 32})), DimensionError);
}

TEST(Backbone, FrozenEntriesGetNoGradient) {
  Model m(toy(), 5);
  m.params().set_all_trainable(false);
  m.params().set_group_trainable(ParamGroup::head, true);
  ad::Graph g;
  Binder bind(g, m.params());
  ad::Var y = m.forward(bind, g.constant(testing::random_tensor({3, 32, 32}, 5, "x")));
  const GradList grads = bind.gradients(g.backward(ad::sum(ad::square(y))));
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const bool has = i < grads.size() && grads[i].has_value();
    EXPECT_EQ(has, m.params().entry(i).group == ParamGroup::head) << m.params().entry(i).name;
  }
}

}  // namespace
}  // namespace wxpeft
