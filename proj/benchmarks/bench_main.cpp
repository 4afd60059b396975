// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "wxpeft/backbone.hpp"
#include "wxpeft/ops.hpp"
#include "wxpeft/peft.hpp"
#include "wxpeft/rng.hpp"
#include "wxpeft/sfas.hpp"

namespace {

using namespace wxpeft;

Tensor noise(Shape shape, std::uint64_t seed, const std::string& stream) {
  Tensor t(shape);
  RngStream rng(seed, stream);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = noise({n, n}, 1, "a"), b = noise({n, n}, 1, "b");
  for (auto _ : state) {
    ad::Graph g(false);
    benchmark::DoNotOptimize(ad::matmul(g.constant(a), g.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

ModelConfig toy() {
  ModelConfig c;
  c.in_vars = 3;
  c.out_vars = 3;
  c.height = 32;
  c.width = 32;
  return c;
}

void BM_ModelForward(benchmark::State& state) {
  const Model m(toy(), 1);
  const Tensor x = noise({3, 32, 32}, 2, "x");
  for (auto _ : state) benchmark::DoNotOptimize(m.predict(x).data().data());
}
BENCHMARK(BM_ModelForward);

void BM_ModelForwardBackward(benchmark::State& state) {
  Model m(toy(), 1);
  PeftOptions o;
  o.seed = 1;
  apply_policy(m, state.range(0) ? Policy::weatherpeft : Policy::full, o);
  const Tensor x = noise({3, 32, 32}, 2, "x");
  for (auto _ : state) {
    ad::Graph g;
    Binder bind(g, m.params());
    const ad::Var loss = ad::mean(ad::square(m.forward(bind, g.constant(x))));
    benchmark::DoNotOptimize(bind.gradients(g.backward(loss)).size());
  }
}
BENCHMARK(BM_ModelForwardBackward)->Arg(0)->Arg(1);

void BM_SelectTopk(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> scores(n);
  RngStream rng(3, "scores");
  for (double& s : scores) s = rng.uniform(0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(select_topk(scores, 0.001).data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SelectTopk)->Arg(50000)->Arg(1000000);

void BM_FisherPerSample(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::vector<double>> grads(8, std::vector<double>(n));
  RngStream rng(4, "grads");
  for (auto& g : grads) {
    for (double& v : g) v = rng.normal();
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimate_fisher(grads, FisherMode::per_sample).data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * 8);
}
BENCHMARK(BM_FisherPerSample)->Arg(50000);

}  // namespace

BENCHMARK_MAIN();
