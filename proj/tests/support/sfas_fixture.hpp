// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gradcheck.hpp"
#include "wxpeft/backbone.hpp"
#include "wxpeft/ops.hpp"
#include "wxpeft/optim.hpp"
#include "wxpeft/sfas.hpp"

namespace wxpeft::testing {

/// 66-parameter model: one block, D=2, a single 2x2 patch.
inline Model tiny_model(std::uint64_t seed) {
  ModelConfig c;
  c.in_vars = 1;
  c.out_vars = 1;
  c.height = 2;
  c.width = 2;
  c.patch = 2;
  c.dim = 2;
  c.depth = 1;
  c.heads = 1;
  c.mlp_ratio = 1;
  Model m(c, seed);
  ParamStore& ps = m.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor& v = ps.value(i);
    const Tensor noise = random_tensor(v.shape(), seed, "tiny." + ps.entry(i).name, 0.5);
    for (std::size_t j = 0; j < v.numel(); ++j) v[j] += noise[j];
  }
  return m;
}

struct Sample {
  Tensor x;
  Tensor y;
};

inline std::vector<Sample> tiny_samples(std::uint64_t seed, std::size_t n) {
  std::vector<Sample> out;
  for (std::size_t j = 0; j < n; ++j) {
    out.push_back({random_tensor({1, 2, 2}, seed + j, "tiny.x"),
                   random_tensor({1, 2, 2}, seed + j, "tiny.y")});
  }
  return out;
}

/// Gradient of 0.5 * ||f(x) - y||^2 for one sample.
inline GradList sample_gradient(const Model& model, const Sample& s) {
  ad::Graph g;
  Binder bind(g, model.params());
  ad::Var pred = model.forward(bind, g.constant(s.x));
  ad::Var loss = ad::scale(ad::sum(ad::square(ad::sub(pred, g.constant(s.y)))), 0.5);
  return bind.gradients(g.backward(loss));
}

inline GradList batch_gradient(const Model& model, const std::vector<Sample>& batch) {
  GradList total;
  for (const Sample& s : batch) accumulate(total, sample_gradient(model, s));
  scale_grads(total, 1.0 / static_cast<double>(batch.size()));
  return total;
}

/// Plain loop: for every backbone coordinate in store order, the mean over
/// samples of its squared gradient.
inline std::vector<double> oracle_fisher(const Model& model, const std::vector<Sample>& batch) {
  const ParamStore& ps = model.params();
  std::vector<double> out;
  for (std::size_t e = 0; e < ps.size(); ++e) {
    if (ps.entry(e).group != ParamGroup::backbone || !ps.entry(e).trainable) continue;
    std::vector<double> acc(ps.value(e).numel(), 0.0);
    for (const Sample& s : batch) {
      const GradList g = sample_gradient(model, s);
      if (e >= g.size() || !g[e]) continue;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (*g[e])[i] * (*g[e])[i];
    }
    for (double& a : acc) a /= static_cast<double>(batch.size());
    out.insert(out.end(), acc.begin(), acc.end());
  }
  return out;
}

struct MaskedRun {
  std::vector<std::vector<double>> trajectory;  // backbone values after each step
  std::vector<std::size_t> selected;
  bool freeze_audit = false;
  std::vector<std::uint8_t> ever_selected;
};

/// Trains all backbone parameters of `model` on fixed batches; with `use_sfas`
/// every step goes through the Fisher mask.
inline MaskedRun run_training(Model& model, const std::vector<std::vector<Sample>>& batches,
                              const SfasConfig& sfas, bool use_sfas, double lr = 0.01) {
  ParamStore& ps = model.params();
  ps.set_all_trainable(false);
  ps.set_group_trainable(ParamGroup::backbone, true);
  const ParamStore initial = ps;
  AdamW opt(ps);
  FisherState state(ps, sfas, batches.size());
  const FlatLayout layout = sfas_domain(ps);
  MaskedRun run;
  for (const auto& batch : batches) {
    if (use_sfas) {
      std::vector<GradList> per_sample;
      for (const Sample& s : batch) per_sample.push_back(sample_gradient(model, s));
      run.selected.push_back(state.select(per_sample).selected);
      masked_step(ps, batch_gradient(model, batch), state.domain(), state.mask(), opt, lr);
      state.advance();
    } else {
      opt.step(ps, batch_gradient(model, batch), lr);
    }
    run.trajectory.push_back(ps.flatten(layout));
  }
  if (use_sfas) {
    run.freeze_audit = state.freeze_audit(initial, ps);
    run.ever_selected = state.ever_selected();
  }
  return run;
}

inline std::vector<std::vector<Sample>> tiny_batches(std::uint64_t seed, std::size_t steps,
                                                     std::size_t batch) {
  std::vector<std::vector<Sample>> out;
  for (std::size_t s = 0; s < steps; ++s) out.push_back(tiny_samples(seed * 1000 + s * batch, batch));
  return out;
}

}  // namespace wxpeft::testing
