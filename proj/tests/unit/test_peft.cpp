// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "../support/gradcheck.hpp"
#include "wxpeft/backbone.hpp"
#include "wxpeft/error.hpp"
#include "wxpeft/peft.hpp"

namespace wxpeft {
namespace {

using testing::random_tensor;

ModelConfig small() {
  ModelConfig c;
  c.in_vars = 3;
  c.out_vars = 2;
  c.height = 16;
  c.width = 16;
  c.dim = 16;
  c.depth = 2;
  return c;
}

constexpr Policy kAll[] = {Policy::full,        Policy::linear_probe, Policy::bias_only,
                           Policy::lora,        Policy::ssf,          Policy::vpt,
                           Policy::adaptformer, Policy::tadp_only,    Policy::sfas_only,
                           Policy::weatherpeft};

PeftOptions options() {
  PeftOptions o;
  o.seed = 3;
  o.vpt_length = 6;
  o.tadp.prompt_len = 5;
  return o;
}

TEST(Peft, PolicyNamesRoundTrip) {
  for (Policy p : kAll) EXPECT_EQ(parse_policy(to_string(p)), p);
  EXPECT_THROW(parse_policy("dora"), ConfigError);
  EXPECT_EQ(parse_prompt_gate("none"), PromptGate::none);
  EXPECT_EQ(parse_prompt_gate("zero_init"), PromptGate::zero_init);
  EXPECT_THROW(parse_prompt_gate("open"), ConfigError);
  EXPECT_TRUE(uses_sfas(Policy::weatherpeft));
  EXPECT_TRUE(uses_sfas(Policy::sfas_only));
  EXPECT_FALSE(uses_sfas(Policy::tadp_only));
  EXPECT_TRUE(uses_tadp(Policy::tadp_only));
  EXPECT_FALSE(uses_tadp(Policy::full));
}

TEST(Peft, EveryPolicyIsIdentityAtInit) {
  const Model plain(small(), 1);
  const Tensor x = random_tensor({3, 16, 16}, 1, "x");
  const Tensor y0 = plain.predict(x);
  for (Policy p : kAll) {
    Model m(small(), 1);
    apply_policy(m, p, options());
    EXPECT_TRUE(m.predict(x).bit_equal(y0)) << to_string(p);
  }
}

TEST(Peft, VptWithoutGateIsNotIdentity) {
  const Model plain(small(), 1);
  Model m(small(), 1);
  PeftOptions o = options();
  o.prompt_gate = PromptGate::none;
  apply_policy(m, Policy::vpt, o);
  const Tensor x = random_tensor({3, 16, 16}, 1, "x");
  EXPECT_GT(max_abs_diff(m.predict(x), plain.predict(x)), 0.0);
}

TEST(Peft, TrainableReports) {
  const ModelConfig c = small();
  const std::size_t d = c.dim, L = c.depth, head = head_param_count(c);
  auto report = [&](Policy p) {
    Model m(c, 2);
    return apply_policy(m, p, options());
  };

  TrainableReport r = report(Policy::full);
  EXPECT_EQ(r.total, model_param_count(c));
  EXPECT_EQ(r.peft, 0u);

  r = report(Policy::linear_probe);
  EXPECT_EQ(r.total, head);
  EXPECT_EQ(r.head, head);

  r = report(Policy::bias_only);
  // per block: norm1/norm2 bias, q/k/v/o bias, fc1 bias, fc2 bias
  EXPECT_EQ(r.backbone, L * (2 * d + 4 * d + 4 * d + d));
  EXPECT_EQ(r.embedding, d);

  r = report(Policy::lora);
  EXPECT_EQ(r.peft, L * 2 * (8 * d + d * 8));
  EXPECT_EQ(r.backbone, 0u);
  EXPECT_EQ(r.total, r.peft + head);

  r = report(Policy::ssf);
  EXPECT_EQ(r.peft, L * 2 * (7 * d + 4 * d));

  r = report(Policy::adaptformer);
  EXPECT_EQ(r.peft, L * (4 * d + 4 + d * 4 + d));

  r = report(Policy::vpt);
  EXPECT_EQ(r.peft, L * 6 * d + L * c.heads);

  TadpConfig t = options().tadp;
  t.dim = d;
  t.vars = c.in_vars;
  t.patch_h = t.patch_w = c.patch;
  r = report(Policy::tadp_only);
  EXPECT_EQ(r.peft, prompt_generator_param_count(t) + L * c.heads);
  EXPECT_EQ(r.backbone, 0u);
  EXPECT_EQ(r.embedding, 0u);

  r = report(Policy::weatherpeft);
  EXPECT_EQ(r.backbone, L * block_param_count(c));
  EXPECT_EQ(r.peft, prompt_generator_param_count(t) + L * c.heads);
  EXPECT_EQ(r.embedding, 0u);

  r = report(Policy::sfas_only);
  EXPECT_EQ(r.backbone, L * block_param_count(c));
  EXPECT_EQ(r.peft, 0u);
}

void randomize_lora(Model& m) {
  for (const auto& pairs : {m.lora->q, m.lora->v}) {
    for (const auto& p : pairs) {
      Tensor& b = m.params().value(p.b);
      b = random_tensor(b.shape(), p.b, "lora.B", 0.1);
    }
  }
}

TEST(Peft, LoraMergeMatchesUnmergedForward) {
  Model m(small(), 4);
  apply_policy(m, Policy::lora, options());
  randomize_lora(m);
  const Tensor x = random_tensor({3, 16, 16}, 4, "x");
  const Tensor unmerged = m.predict(x);
  merge_lora(m);
  EXPECT_LT(max_abs_diff(m.predict(x), unmerged), 1e-12);
  unmerge_lora(m);
  EXPECT_TRUE(m.predict(x).bit_equal(unmerged));
}

TEST(Peft, LoraUnmergeRestoresWeightsBitExactly) {
  Model m(small(), 5);
  apply_policy(m, Policy::lora, options());
  randomize_lora(m);
  std::vector<Tensor> before;
  for (std::size_t i = 0; i < m.params().size(); ++i) before.push_back(m.params().value(i));
  merge_lora(m);
  EXPECT_FALSE(m.params().value(m.block(0).q_weight).bit_equal(before[m.block(0).q_weight]));
  unmerge_lora(m);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    EXPECT_TRUE(m.params().value(i).bit_equal(before[i])) << m.params().entry(i).name;
  }
}

TEST(Peft, LoraMergeMisuseThrows) {
  Model m(small(), 6);
  EXPECT_THROW(merge_lora(m), ContractError);
  apply_policy(m, Policy::lora, options());
  EXPECT_THROW(unmerge_lora(m), ContractError);
  merge_lora(m);
  EXPECT_THROW(merge_lora(m), ContractError);
}

TEST(Peft, SinglePromptSlot) {
  Model m(small(), 7);
  attach_vpt(m, 4, PromptGate::zero_init, 7);
  EXPECT_THROW(attach_tadp(m, TadpConfig{}, PromptGate::zero_init, 7), ContractError);
  EXPECT_THROW(attach_lora(m, 0, 1.0, 7), ConfigError);
}

TEST(Peft, AttachedModulesLeaveBackboneInitUntouched) {
  const Model plain(small(), 8);
  Model m(small(), 8);
  apply_policy(m, Policy::weatherpeft, options());
  for (std::size_t i = 0; i < plain.params().size(); ++i) {
    const auto j = m.params().find(plain.params().entry(i).name);
    ASSERT_TRUE(j.has_value());
    EXPECT_TRUE(m.params().value(*j).bit_equal(plain.params().value(i)));
  }
}

}  // namespace
}  // namespace wxpeft
