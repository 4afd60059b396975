// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/tadp.hpp"

#include <cmath>

#include "wxpeft/error.hpp"
#include "wxpeft/ops.hpp"

namespace wxpeft {

namespace {

constexpr double kInitStd = 0.02;

std::size_t add_weight(ParamStore& store, const std::string& name, Shape shape,
                       std::uint64_t seed, ParamGroup group) {
  return store.add(name, trunc_normal(std::move(shape), kInitStd, seed, name), group);
}

}  // namespace

Adapter Adapter::create(ParamStore& store, const std::string& prefix, std::size_t width,
                        std::size_t hidden, std::uint64_t seed, ParamGroup group) {
  if (width == 0 || hidden == 0) throw ConfigError(prefix + ": adapter widths must be positive");
  Adapter a;
  a.width = width;
  a.hidden = hidden;
  a.norm_weight = store.add(prefix + ".norm.weight", Tensor::ones({width}), group);
  a.norm_bias = store.add(prefix + ".norm.bias", Tensor::zeros({width}), group);
  a.down_weight = add_weight(store, prefix + ".down.weight", {hidden, width}, seed, group);
  a.down_bias = store.add(prefix + ".down.bias", Tensor::zeros({hidden}), group);
  a.up_weight = add_weight(store, prefix + ".up.weight", {width, hidden}, seed, group);
  a.up_bias = store.add(prefix + ".up.bias", Tensor::zeros({width}), group);
  return a;
}

ad::Var adapter_forward(Binder& bind, const Adapter& a, ad::Var x) {
  if (x.shape().back() != a.width) {
    throw DimensionError("adapter of width " + std::to_string(a.width) + " applied to " +
                         shape_string(x.shape()));
  }
  ad::Var h = ad::layernorm_lastdim(x, bind(a.norm_weight), bind(a.norm_bias));
  h = ad::gelu(ad::linear(h, bind(a.down_weight), bind(a.down_bias)));
  return ad::linear(h, bind(a.up_weight), bind(a.up_bias));
}

std::size_t TadpConfig::resolved_v_hidden() const {
  if (v_hidden) return v_hidden;
  std::size_t h = (vars + 1) / 2;
  if (vars > 1 && h > vars - 1) h = vars - 1;
  return h == 0 ? 1 : h;
}

PromptGenerator PromptGenerator::create(ParamStore& store, const TadpConfig& c,
                                        std::uint64_t seed) {
  if (c.dim == 0 || c.vars == 0 || c.patch_h == 0 || c.patch_w == 0 || c.prompt_len == 0) {
    throw ConfigError("tadp: dim, vars, patch and prompt length must be positive");
  }
  const auto g = ParamGroup::peft;
  PromptGenerator p;
  p.config = c;
  const std::size_t hw = c.patch_h * c.patch_w;
  const std::size_t rows = c.vars * hw;
  p.adapter_hw = Adapter::create(store, "tadp.adapter_hw", hw, c.hw_hidden, seed, g);
  p.adapter_v = Adapter::create(store, "tadp.adapter_v", c.vars, c.resolved_v_hidden(), seed, g);
  p.adapter_d = Adapter::create(store, "tadp.adapter_d", c.dim, c.d_hidden, seed, g);
  p.w_q = add_weight(store, "tadp.attn.q.weight", {c.dim, c.dim}, seed, g);
  p.w_k = add_weight(store, "tadp.attn.k.weight", {c.dim, c.dim}, seed, g);
  p.w_v = add_weight(store, "tadp.attn.v.weight", {c.dim, c.dim}, seed, g);
  p.mlp_fc1_weight = add_weight(store, "tadp.mlp.fc1.weight", {c.e_hidden, rows}, seed, g);
  p.mlp_fc1_bias = store.add("tadp.mlp.fc1.bias", Tensor::zeros({c.e_hidden}), g);
  p.mlp_fc2_weight = add_weight(store, "tadp.mlp.fc2.weight", {c.prompt_len, c.e_hidden}, seed, g);
  p.mlp_fc2_bias = store.add("tadp.mlp.fc2.bias", Tensor::zeros({c.prompt_len}), g);
  return p;
}

std::size_t PromptGenerator::numel(const ParamStore& store) const {
  std::size_t n = 0;
  for (const auto& e : store.entries()) {
    if (e.name.starts_with("tadp.") && e.name != "tadp.gates") n += e.value.numel();
  }
  return n;
}

std::size_t prompt_generator_param_count(const TadpConfig& c) {
  auto adapter = [](std::size_t n, std::size_t h) { return 2 * n + h * n + h + n * h + n; };
  const std::size_t hw = c.patch_h * c.patch_w;
  const std::size_t rows = c.vars * hw;
  return adapter(hw, c.hw_hidden) + adapter(c.vars, c.resolved_v_hidden()) +
         adapter(c.dim, c.d_hidden) + 3 * c.dim * c.dim + c.e_hidden * rows + c.e_hidden +
         c.prompt_len * c.e_hidden + c.prompt_len;
}

ad::Var internal_patterns(Binder& bind, const PromptGenerator& gen, ad::Var e) {
  const TadpConfig& c = gen.config;
  const Shape expected{c.dim, c.vars, c.patch_h, c.patch_w};
  if (e.shape() != expected) {
    throw DimensionError("tadp: embedding weights " + shape_string(e.shape()) +
                         " do not match generator config " + shape_string(expected));
  }
  ad::Var x = ad::reshape(e, {c.dim, c.vars, c.patch_h * c.patch_w});
  ad::Var e_hw = ad::pi_shift(adapter_forward(bind, gen.adapter_hw, x));    // HW x D x V
  ad::Var e_v = ad::pi_shift(adapter_forward(bind, gen.adapter_v, e_hw));   // V x HW x D
  return adapter_forward(bind, gen.adapter_d, e_v);
}

ad::Var external_integration(Binder& bind, const PromptGenerator& gen, ad::Var e_d) {
  const TadpConfig& c = gen.config;
  const std::size_t rows = c.vars * c.patch_h * c.patch_w;
  const Shape expected{c.vars, c.patch_h * c.patch_w, c.dim};
  if (e_d.shape() != expected) {
    throw DimensionError("tadp: pattern tensor " + shape_string(e_d.shape()) +
                         " does not match generator config " + shape_string(expected));
  }
  ad::Var flat = ad::reshape(e_d, {rows, c.dim});
  ad::Var q = ad::linear(flat, bind(gen.w_q));
  ad::Var k = ad::linear(flat, bind(gen.w_k));
  ad::Var v = ad::linear(flat, bind(gen.w_v));
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.dim));
  ad::Var attn = ad::softmax_lastdim(ad::scale(ad::matmul_nt(q, k), scale));
  ad::Var e_sa = ad::pi_shift(ad::matmul(attn, v));  // D x rows
  ad::Var h = ad::gelu(ad::linear(e_sa, bind(gen.mlp_fc1_weight), bind(gen.mlp_fc1_bias)));
  ad::Var out = ad::linear(h, bind(gen.mlp_fc2_weight), bind(gen.mlp_fc2_bias));  // D x P
  return ad::pi_shift(out);
}

ad::Var generate_prompts(Binder& bind, const PromptGenerator& gen, ad::Var embed_weight) {
  return external_integration(bind, gen, internal_patterns(bind, gen, embed_weight));
}

}  // namespace wxpeft
