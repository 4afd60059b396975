// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "../support/op_cases.hpp"
#include "wxpeft/backbone.hpp"
#include "wxpeft/error.hpp"
#include "wxpeft/ops.hpp"
#include "wxpeft/peft.hpp"
#include "wxpeft/rng.hpp"
#include "wxpeft/tadp.hpp"

namespace wxpeft {
namespace {

using testing::random_tensor;

Shape prompt_shape(const TadpConfig& c, std::uint64_t seed) {
  ParamStore store;
  const std::size_t e = store.add(
      "embed.weight", random_tensor({c.dim, c.vars, c.patch_h, c.patch_w}, seed, "E", 0.02),
      ParamGroup::embedding, false);
  const PromptGenerator gen = PromptGenerator::create(store, c, seed);
  ad::Graph g(false);
  Binder bind(g, store);
  const ad::Var e_d = internal_patterns(bind, gen, bind(e));
  EXPECT_EQ(e_d.shape(), (Shape{c.vars, c.patch_h * c.patch_w, c.dim}));
  const ad::Var p = external_integration(bind, gen, e_d);
  EXPECT_TRUE(p.value().all_finite());
  EXPECT_EQ(gen.numel(store), prompt_generator_param_count(c));
  return p.shape();
}

TEST(Tadp, ReferenceConfigGivesThirtyByFiveTwelve) {
  TadpConfig c;
  c.dim = 512;
  c.vars = 11;
  c.patch_h = 4;
  c.patch_w = 4;
  c.prompt_len = 30;
  EXPECT_EQ(prompt_shape(c, 1), (Shape{30, 512}));
}

TEST(Tadp, RandomConfigsFollowShapeLaw) {
  RngStream rng(11, "tadp-configs");
  for (int i = 0; i < 50; ++i) {
    TadpConfig c;
    c.dim = 4 + rng.below(29);
    c.vars = 1 + rng.below(8);
    c.patch_h = 1 + rng.below(4);
    c.patch_w = 1 + rng.below(4);
    c.prompt_len = 1 + rng.below(40);
    c.hw_hidden = 1 + rng.below(8);
    c.d_hidden = 1 + rng.below(16);
    c.e_hidden = 1 + rng.below(16);
    EXPECT_EQ(prompt_shape(c, i), (Shape{c.prompt_len, c.dim})) << "config " << i;
  }
}

TEST(Tadp, ParameterCountMatchesHandCount) {
  TadpConfig c;
  c.dim = 512;
  c.vars = 11;
  c.patch_h = 4;
  c.patch_w = 4;
  c.prompt_len = 30;
  // adapters 312 + 171 + 17936, attention 3 * 512^2, MLP 2832 + 510
  EXPECT_EQ(prompt_generator_param_count(c), 808193u);
}

TEST(Tadp, VariableBottleneckDefault) {
  TadpConfig c;
  c.vars = 11;
  EXPECT_EQ(c.resolved_v_hidden(), 6u);
  c.vars = 2;
  EXPECT_EQ(c.resolved_v_hidden(), 1u);
  c.vars = 1;
  EXPECT_EQ(c.resolved_v_hidden(), 1u);
  c.v_hidden = 3;
  EXPECT_EQ(c.resolved_v_hidden(), 3u);
}

TEST(Tadp, AdapterMatchesManualComputation) {
  ParamStore store;
  const Adapter a = Adapter::create(store, "a.", 4, 2, 3, ParamGroup::peft);
  for (std::size_t i = 0; i < store.size(); ++i) {
    store.value(i) = random_tensor(store.value(i).shape(), 3, store.entry(i).name);
  }
  const Tensor x = random_tensor({3, 4}, 3, "x");
  ad::Graph g(false);
  Binder bind(g, store);
  const Tensor y = adapter_forward(bind, a, g.constant(x)).value();
  ASSERT_EQ(y.shape(), (Shape{3, 4}));
  const Tensor& gw = store.value(a.norm_weight);
  const Tensor& gb = store.value(a.norm_bias);
  const Tensor& dw = store.value(a.down_weight);
  const Tensor& db = store.value(a.down_bias);
  const Tensor& uw = store.value(a.up_weight);
  const Tensor& ub = store.value(a.up_bias);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 4; ++j) m += x.at({r, j}) / 4.0;
    for (std::size_t j = 0; j < 4; ++j) v += (x.at({r, j}) - m) * (x.at({r, j}) - m) / 4.0;
    double n[4];
    for (std::size_t j = 0; j < 4; ++j) n[j] = (x.at({r, j}) - m) / std::sqrt(v + 1e-5) * gw[j] + gb[j];
    double h[2];
    for (std::size_t k = 0; k < 2; ++k) {
      double s = db[k];
      for (std::size_t j = 0; j < 4; ++j) s += dw.at({k, j}) * n[j];
      h[k] = s * normal_cdf(s);
    }
    for (std::size_t j = 0; j < 4; ++j) {
      const double expect = ub[j] + uw.at({j, 0}) * h[0] + uw.at({j, 1}) * h[1];
      EXPECT_NEAR(y.at({r, j}), expect, 1e-12);
    }
  }
}

TEST(Tadp, GeneratorGradientWithRespectToEmbedding) {
  TadpConfig c;
  c.dim = 6;
  c.vars = 3;
  c.patch_h = 2;
  c.patch_w = 2;
  c.prompt_len = 4;
  c.hw_hidden = 2;
  c.d_hidden = 3;
  c.e_hidden = 3;
  ParamStore store;
  const PromptGenerator gen = PromptGenerator::create(store, c, 2);
  for (std::size_t i = 0; i < store.size(); ++i) {
    store.value(i) = random_tensor(store.value(i).shape(), 2, store.entry(i).name, 0.5);
  }
  store.set_all_trainable(false);
  const auto r = testing::gradcheck(
      [&](ad::Graph& g, const std::vector<ad::Var>& x) {
        Binder bind(g, store);
        return testing::project(generate_prompts(bind, gen, x[0]), 2);
      },
      {random_tensor({6, 3, 2, 2}, 2, "E")});
  EXPECT_LT(r.worst_relative, 1e-6);
}

TEST(Tadp, MismatchedEmbeddingShapeThrows) {
  TadpConfig c;
  c.dim = 8;
  c.vars = 2;
  c.patch_h = 2;
  c.patch_w = 2;
  ParamStore store;
  const PromptGenerator gen = PromptGenerator::create(store, c, 1);
  ad::Graph g(false);
  Binder bind(g, store);
  EXPECT_THROW(generate_prompts(bind, gen, g.constant(Tensor({8, 3, 2, 2}))), DimensionError);
}

ModelConfig small() {
  ModelConfig c;
  c.in_vars = 3;
  c.out_vars = 3;
  c.height = 16;
  c.width = 16;
  c.dim = 16;
  c.depth = 2;
  return c;
}

TEST(Tadp, InjectionOffReproducesPlainBackbone) {
  for (PromptGate gate : {PromptGate::none, PromptGate::zero_init}) {
    const Model plain(small(), 9);
    Model prompted(small(), 9);
    TadpConfig t;
    t.prompt_len = 5;
    attach_tadp(prompted, t, gate, 9);
    const Tensor x = random_tensor({3, 16, 16}, 9, "x");
    ForwardOptions off;
    off.inject_prompts = false;
    EXPECT_TRUE(prompted.predict(x, off).bit_equal(plain.predict(x)));
  }
}

TEST(Tadp, UngatedInjectionChangesOutput) {
  const Model plain(small(), 9);
  Model prompted(small(), 9);
  TadpConfig t;
  t.prompt_len = 5;
  attach_tadp(prompted, t, PromptGate::none, 9);
  const Tensor x = random_tensor({3, 16, 16}, 9, "x");
  EXPECT_GT(max_abs_diff(prompted.predict(x), plain.predict(x)), 0.0);
}

TEST(Tadp, ZeroGatesLeaveOutputUnchanged) {
  const Model plain(small(), 10);
  Model prompted(small(), 10);
  TadpConfig t;
  t.prompt_len = 5;
  attach_tadp(prompted, t, PromptGate::zero_init, 10);
  const Tensor x = random_tensor({3, 16, 16}, 10, "x");
  EXPECT_TRUE(prompted.predict(x).bit_equal(plain.predict(x)));
  prompted.params().value(*prompted.prompts->gates)[0] = 0.5;
  EXPECT_GT(max_abs_diff(prompted.predict(x), plain.predict(x)), 0.0);
}

}  // namespace
}  // namespace wxpeft
