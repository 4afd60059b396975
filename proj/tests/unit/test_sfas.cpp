// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <numeric>

#include "../support/sfas_fixture.hpp"
#include "wxpeft/error.hpp"
#include "wxpeft/sfas.hpp"

namespace wxpeft {
namespace {

using namespace wxpeft::testing;

TEST(Fisher, TinyModelHasAtMostHundredParameters) {
  const Model m = tiny_model(1);
  EXPECT_EQ(m.params().numel(), 66u);
  EXPECT_EQ(m.params().numel(ParamGroup::backbone), 44u);
}

TEST(Fisher, PerSampleMatchesLoopOracle) {
  Model m = tiny_model(3);
  m.params().set_all_trainable(true);
  const auto batch = tiny_samples(3, 6);
  std::vector<GradList> grads;
  for (const auto& s : batch) grads.push_back(sample_gradient(m, s));
  FisherState state(m.params(), SfasConfig{}, 1);
  state.select(grads);
  const std::vector<double> oracle = oracle_fisher(m, batch);
  ASSERT_EQ(state.fisher().size(), oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(state.fisher()[i], oracle[i], 1e-12);
}

TEST(Fisher, ModesOnHandVectors) {
  const std::vector<std::vector<double>> g{{1.0, -2.0}, {3.0, 2.0}};
  const auto ps = estimate_fisher(g, FisherMode::per_sample);
  EXPECT_DOUBLE_EQ(ps[0], 5.0);
  EXPECT_DOUBLE_EQ(ps[1], 4.0);
  const auto bm = estimate_fisher(g, FisherMode::batch_mean);
  EXPECT_DOUBLE_EQ(bm[0], 4.0);
  EXPECT_DOUBLE_EQ(bm[1], 0.0);
  EXPECT_EQ(parse_fisher_mode("batch_mean"), FisherMode::batch_mean);
  EXPECT_THROW(parse_fisher_mode("exact"), ConfigError);
}

TEST(Fisher, MatchesKlCurvatureOfGaussianLikelihood) {
  const Model m = tiny_model(4);
  const auto batch = tiny_samples(4, 5);
  std::vector<Tensor> inputs;
  for (const auto& s : batch) inputs.push_back(s.x);
  const std::size_t entry = m.block(0).fc1_weight;
  // Expected Fisher under y ~ N(f(x), 1): mean over samples of |d f / d theta|^2.
  double fisher = 0.0;
  for (const auto& s : batch) {
    for (std::size_t k = 0; k < 4; ++k) {
      ad::Graph g;
      Binder bind(g, m.params());
      ad::Var y = m.forward(bind, g.constant(s.x));
      Tensor pick({1, 2, 2});
      pick[k] = 1.0;
      const GradList gl = bind.gradients(g.backward(ad::sum(ad::mul(y, g.constant(pick)))));
      fisher += (*gl[entry])[0] * (*gl[entry])[0];
    }
  }
  fisher /= static_cast<double>(batch.size());
  const auto rows = kl_quadratic_check(m, inputs, entry, 0, {1e-2, 1e-3, 1e-4});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NEAR(rows[2].ratio, 0.5 * fisher, 1e-3 * fisher + 1e-9);
  EXPECT_LT(std::abs(rows[2].ratio - 0.5 * fisher), std::abs(rows[0].ratio - 0.5 * fisher) + 1e-12);
}

TEST(Noise, ScaleAnneals) {
  EXPECT_DOUBLE_EQ(noise_scale(0.2, 0, 10), 0.2);
  EXPECT_DOUBLE_EQ(noise_scale(0.2, 5, 10), 0.1);
  EXPECT_EQ(noise_scale(0.2, 10, 10), 0.0);
}

TEST(Noise, FinalStepScoresEqualFisherBitExactly) {
  const std::vector<double> f{0.5, 1e-9, 3.0, 0.0};
  const auto out = perturb(f, 7, 7, 0.2, 1);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(out[i], f[i]);
}

TEST(Noise, DrawsAreBoundedAndReplayable) {
  const std::vector<double> f(1000, 0.0);
  const auto a = perturb(f, 2, 10, 0.5, 9);
  const auto b = perturb(f, 2, 10, 0.5, 9);
  const auto c = perturb(f, 3, 10, 0.5, 9);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  double mean = 0.0;
  for (double v : a) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 0.4);
    mean += v / 1000.0;
  }
  EXPECT_NEAR(mean, 0.2, 0.02);
}

TEST(TopK, CountsUseCeiling) {
  EXPECT_EQ(topk_count(0.1, 30), 3u);
  EXPECT_EQ(topk_count(0.001, 44), 1u);
  EXPECT_EQ(topk_count(0.001, 53000), 53u);
  EXPECT_EQ(topk_count(0.001, 53001), 54u);
  EXPECT_EQ(topk_count(0.5, 3), 2u);
  EXPECT_EQ(topk_count(1.0, 17), 17u);
  EXPECT_THROW(topk_count(0.0, 10), ConfigError);
  EXPECT_THROW(topk_count(1.5, 10), ConfigError);
}

TEST(TopK, SelectsLargestAndBreaksTiesByIndex) {
  const std::vector<double> s{0.1, 0.9, 0.5, 0.9, 0.2};
  EXPECT_EQ(select_top(s, 2), (std::vector<std::uint8_t>{0, 1, 0, 1, 0}));
  EXPECT_EQ(select_top(s, 1), (std::vector<std::uint8_t>{0, 1, 0, 0, 0}));
  const std::vector<double> flat(6, 1.0);
  EXPECT_EQ(select_top(flat, 3), (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0}));
  EXPECT_EQ(select_topk(s, 1.0), (std::vector<std::uint8_t>{1, 1, 1, 1, 1}));
}

TEST(SfasMechanics, MaskCardinalityEveryStep) {
  Model m = tiny_model(5);
  SfasConfig cfg;
  cfg.k = 0.1;
  cfg.seed = 5;
  const auto run = run_training(m, tiny_batches(5, 12, 4), cfg, true);
  for (std::size_t sel : run.selected) EXPECT_EQ(sel, 5u);
}

TEST(SfasMechanics, NeverSelectedCoordinatesStayPretrained) {
  Model m = tiny_model(6);
  const Model pretrained = m;
  SfasConfig cfg;
  cfg.k = 0.05;
  cfg.seed = 6;
  const auto run = run_training(m, tiny_batches(6, 8, 3), cfg, true);
  EXPECT_TRUE(run.freeze_audit);
  const FlatLayout layout = sfas_domain(m.params());
  const auto before = pretrained.params().flatten(layout);
  const auto after = m.params().flatten(layout);
  std::size_t never = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (run.ever_selected[i]) continue;
    ++never;
    EXPECT_EQ(std::bit_cast<std::uint64_t>(before[i]), std::bit_cast<std::uint64_t>(after[i]));
  }
  EXPECT_GT(never, 0u);
}

TEST(SfasMechanics, FullSelectionWithoutNoiseEqualsPlainAdamW) {
  SfasConfig cfg;
  cfg.k = 1.0;
  cfg.gamma = 0.0;
  const auto batches = tiny_batches(7, 10, 3);
  Model a = tiny_model(7), b = tiny_model(7);
  const auto masked = run_training(a, batches, cfg, true);
  const auto plain = run_training(b, batches, cfg, false);
  ASSERT_EQ(masked.trajectory.size(), plain.trajectory.size());
  for (std::size_t t = 0; t < plain.trajectory.size(); ++t) {
    for (std::size_t i = 0; i < plain.trajectory[t].size(); ++i) {
      ASSERT_EQ(std::bit_cast<std::uint64_t>(masked.trajectory[t][i]),
                std::bit_cast<std::uint64_t>(plain.trajectory[t][i]))
          << "step " << t << " coordinate " << i;
    }
  }
}

TEST(SfasMechanics, AuditDetectsTampering) {
  Model m = tiny_model(8);
  m.params().set_all_trainable(false);
  m.params().set_group_trainable(ParamGroup::backbone, true);
  const ParamStore initial = m.params();
  SfasConfig cfg;
  cfg.k = 0.05;
  FisherState state(m.params(), cfg, 1);
  std::vector<GradList> grads{sample_gradient(m, tiny_samples(8, 1)[0])};
  state.select(grads);
  EXPECT_TRUE(state.freeze_audit(initial, m.params()));
  std::size_t unselected = 0;
  while (state.mask()[unselected]) ++unselected;
  for (const FlatSlice& slice : state.domain().slices) {
    if (unselected >= slice.offset && unselected < slice.offset + slice.numel) {
      m.params().value(slice.entry)[unselected - slice.offset] += 1.0;
    }
  }
  EXPECT_FALSE(state.freeze_audit(initial, m.params()));
}

TEST(SfasMechanics, ScheduleLimits) {
  Model m = tiny_model(9);
  m.params().set_all_trainable(true);
  EXPECT_THROW(FisherState(m.params(), SfasConfig{}, 0), ConfigError);
  FisherState state(m.params(), SfasConfig{}, 1);
  std::vector<GradList> grads{sample_gradient(m, tiny_samples(9, 1)[0])};
  state.select(grads);
  state.advance();
  EXPECT_THROW(state.select(grads), ContractError);
  m.params().set_group_trainable(ParamGroup::backbone, false);
  EXPECT_THROW(FisherState(m.params(), SfasConfig{}, 3), ConfigError);
}

TEST(SfasMechanics, DomainCanExcludeNormAndBias) {
  Model m = tiny_model(10);
  m.params().set_all_trainable(true);
  const FlatLayout all = sfas_domain(m.params());
  const FlatLayout weights = sfas_domain(m.params(), true);
  EXPECT_EQ(all.total, 44u);
  // q/k/v/o weights 4 * 4, fc1 and fc2 weights 2 * 2 each
  EXPECT_EQ(weights.total, 24u);
}

}  // namespace
}  // namespace wxpeft
