// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/backbone.hpp"

#include <cmath>
#include <string>

#include "wxpeft/error.hpp"
#include "wxpeft/ops.hpp"

namespace wxpeft {

namespace {

constexpr double kInitStd = 0.02;

std::string block_name(std::size_t i, const char* leaf) {
  return "blocks." + std::to_string(i) + "." + leaf;
}

}  // namespace

void ModelConfig::validate() const {
  if (in_vars == 0 || out_vars == 0 || height == 0 || width == 0 || patch == 0 || dim == 0 ||
      depth == 0 || heads == 0 || mlp_ratio == 0) {
    throw ConfigError("model dimensions must all be positive");
  }
  if (height % patch || width % patch) {
    throw ConfigError("grid " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by patch " + std::to_string(patch));
  }
  if (dim % heads) {
    throw ConfigError("model.dim " + std::to_string(dim) + " is not divisible by model.heads " +
                      std::to_string(heads));
  }
}

std::size_t embedding_param_count(const ModelConfig& c) { return c.dim * c.patch_in() + c.dim; }

std::size_t block_param_count(const ModelConfig& c) {
  const std::size_t d = c.dim, r = c.mlp_ratio;
  return 4 * d * d + 4 * d + 2 * r * d * d + (r + 1) * d + 4 * d;
}

std::size_t head_param_count(const ModelConfig& c) {
  return c.patch_out() * c.dim + c.patch_out();
}

std::size_t model_param_count(const ModelConfig& c) {
  return embedding_param_count(c) + c.depth * block_param_count(c) + head_param_count(c);
}

Tensor sinusoidal_encoding(std::size_t tokens, std::size_t dim) {
  Tensor pe({tokens, dim});
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) * freq;
      pe[t * dim + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t d = config_.dim, hidden = config_.mlp_ratio * config_.dim;
  pos_encoding_ = sinusoidal_encoding(config_.tokens(), d);

  auto weight = [&](const std::string& name, Shape shape, ParamGroup g) {
    return params_.add(name, trunc_normal(std::move(shape), kInitStd, seed, name), g);
  };
  auto zeros = [&](const std::string& name, std::size_t n, ParamGroup g) {
    return params_.add(name, Tensor::zeros({n}), g);
  };
  auto ones = [&](const std::string& name, std::size_t n, ParamGroup g) {
    return params_.add(name, Tensor::ones({n}), g);
  };

  const auto E = ParamGroup::embedding;
  embed_weight_ =
      weight("embed.weight", {d, config_.in_vars, config_.patch, config_.patch}, E);
  embed_bias_ = zeros("embed.bias", d, E);

  const auto B = ParamGroup::backbone;
  for (std::size_t i = 0; i < config_.depth; ++i) {
    BlockParams p{};
    p.norm1_weight = ones(block_name(i, "norm1.weight"), d, B);
    p.norm1_bias = zeros(block_name(i, "norm1.bias"), d, B);
    p.q_weight = weight(block_name(i, "attn.q.weight"), {d, d}, B);
    p.q_bias = zeros(block_name(i, "attn.q.bias"), d, B);
    p.k_weight = weight(block_name(i, "attn.k.weight"), {d, d}, B);
    p.k_bias = zeros(block_name(i, "attn.k.bias"), d, B);
    p.v_weight = weight(block_name(i, "attn.v.weight"), {d, d}, B);
    p.v_bias = zeros(block_name(i, "attn.v.bias"), d, B);
    p.o_weight = weight(block_name(i, "attn.o.weight"), {d, d}, B);
    p.o_bias = zeros(block_name(i, "attn.o.bias"), d, B);
    p.norm2_weight = ones(block_name(i, "norm2.weight"), d, B);
    p.norm2_bias = zeros(block_name(i, "norm2.bias"), d, B);
    p.fc1_weight = weight(block_name(i, "mlp.fc1.weight"), {hidden, d}, B);
    p.fc1_bias = zeros(block_name(i, "mlp.fc1.bias"), hidden, B);
    p.fc2_weight = weight(block_name(i, "mlp.fc2.weight"), {d, hidden}, B);
    p.fc2_bias = zeros(block_name(i, "mlp.fc2.bias"), d, B);
    blocks_.push_back(p);
  }

  const auto H = ParamGroup::head;
  head_weight_ = weight("head.weight", {config_.patch_out(), d}, H);
  head_bias_ = zeros("head.bias", config_.patch_out(), H);
}

ad::Var Model::embed(Binder& bind, ad::Var x) const {
  const Shape expected{config_.in_vars, config_.height, config_.width};
  if (x.shape() != expected) {
    throw DimensionError("model expects input " + shape_string(expected) + ", got " +
                         shape_string(x.shape()));
  }
  ad::Var patches = ad::patchify(x, config_.patch, config_.patch);
  ad::Var w = ad::reshape(bind(embed_weight_), {config_.dim, config_.patch_in()});
  ad::Var tokens = ad::linear(patches, w, bind(embed_bias_));
  return ad::add(tokens, bind.graph().constant_ref(pos_encoding_));
}

ad::Var Model::apply_ssf(Binder& bind, ad::Var x, std::size_t block, SsfSite site) const {
  if (!ssf) return x;
  const auto& pt = ssf->blocks.at(block)[static_cast<std::size_t>(site)];
  return ad::add_rowvec(ad::mul_rowvec(x, bind(pt.scale)), bind(pt.shift));
}

ad::Var Model::attention(Binder& bind, ad::Var h, std::size_t index,
                         std::size_t n_prompt) const {
  const BlockParams& p = blocks_[index];
  const std::size_t heads = config_.heads, dh = config_.dim / heads;
  const std::size_t n = h.shape()[0];

  ad::Var q = ad::linear(h, bind(p.q_weight), bind(p.q_bias));
  ad::Var v = ad::linear(h, bind(p.v_weight), bind(p.v_bias));
  if (lora && !lora->merged) {
    const double s = lora->scaling();
    const auto& lq = lora->q.at(index);
    const auto& lv = lora->v.at(index);
    q = ad::add(q, ad::scale(ad::linear(ad::linear(h, bind(lq.a)), bind(lq.b)), s));
    v = ad::add(v, ad::scale(ad::linear(ad::linear(h, bind(lv.a)), bind(lv.b)), s));
  }
  ad::Var k = ad::linear(h, bind(p.k_weight), bind(p.k_bias));
  q = apply_ssf(bind, q, index, SsfSite::q);
  k = apply_ssf(bind, k, index, SsfSite::k);
  v = apply_ssf(bind, v, index, SsfSite::v);

  const bool gated = n_prompt > 0 && prompts && prompts->gate == PromptGate::zero_init;
  std::optional<ad::Var> gates;
  if (gated) gates = ad::reshape(bind(*prompts->gates), {config_.depth * heads});

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> outs;
  outs.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    ad::Var qh = ad::slice_lastdim(q, hd * dh, dh);
    ad::Var kh = ad::slice_lastdim(k, hd * dh, dh);
    ad::Var vh = ad::slice_lastdim(v, hd * dh, dh);
    if (!gated) {
      ad::Var a = ad::softmax_lastdim(ad::scale(ad::matmul_nt(qh, kh), scale));
      outs.push_back(ad::matmul(a, vh));
      continue;
    }
    const std::size_t m = n - n_prompt;
    ad::Var kr = ad::slice_first(kh, n_prompt, m);
    ad::Var vr = ad::slice_first(vh, n_prompt, m);
    ad::Var kp = ad::slice_first(kh, 0, n_prompt);
    ad::Var vp = ad::slice_first(vh, 0, n_prompt);
    ad::Var ar = ad::softmax_lastdim(ad::scale(ad::matmul_nt(qh, kr), scale));
    ad::Var ap = ad::softmax_lastdim(ad::scale(ad::matmul_nt(qh, kp), scale));
    ad::Var gate = ad::slice_first(*gates, index * heads + hd, 1);
    outs.push_back(ad::add(ad::matmul(ar, vr), ad::scale_by(ad::matmul(ap, vp), gate)));
  }
  ad::Var merged = heads == 1 ? outs[0] : ad::concat_lastdim(outs);
  ad::Var o = ad::linear(merged, bind(p.o_weight), bind(p.o_bias));
  return apply_ssf(bind, o, index, SsfSite::proj);
}

ad::Var Model::block_forward(Binder& bind, ad::Var x, std::size_t index,
                             std::size_t n_prompt) const {
  if (index >= blocks_.size()) throw ContractError("block index out of range");
  if (x.shape().size() != 2 || x.shape()[1] != config_.dim) {
    throw DimensionError("block expects tokens of width " + std::to_string(config_.dim) +
                         ", got " + shape_string(x.shape()));
  }
  const BlockParams& p = blocks_[index];
  ad::Var h = ad::layernorm_lastdim(x, bind(p.norm1_weight), bind(p.norm1_bias));
  h = apply_ssf(bind, h, index, SsfSite::norm1);
  x = ad::add(x, attention(bind, h, index, n_prompt));

  ad::Var h2 = ad::layernorm_lastdim(x, bind(p.norm2_weight), bind(p.norm2_bias));
  h2 = apply_ssf(bind, h2, index, SsfSite::norm2);
  ad::Var m = ad::linear(h2, bind(p.fc1_weight), bind(p.fc1_bias));
  m = ad::gelu(apply_ssf(bind, m, index, SsfSite::fc1));
  m = ad::linear(m, bind(p.fc2_weight), bind(p.fc2_bias));
  m = apply_ssf(bind, m, index, SsfSite::fc2);
  ad::Var out = ad::add(x, m);
  if (adaptformer) {
    const auto& a = adaptformer->blocks.at(index);
    ad::Var z = ad::gelu(ad::linear(x, bind(a.down_weight), bind(a.down_bias)));
    z = ad::linear(z, bind(a.up_weight), bind(a.up_bias));
    out = ad::add(out, ad::scale(z, adaptformer->scale));
  }
  return out;
}

ad::Var Model::prompt_tokens(Binder& bind, std::size_t index,
                             const std::optional<ad::Var>& shared) const {
  if (shared) return *shared;
  const std::size_t len = prompts->length;
  ad::Var all = ad::reshape(bind(*prompts->vpt_prompts), {config_.depth * len, config_.dim});
  return ad::slice_first(all, index * len, len);
}

ad::Var Model::forward(Binder& bind, ad::Var x, const ForwardOptions& options) const {
  ad::Var tokens = embed(bind, x);
  const std::size_t m = config_.tokens();
  const bool inject = options.inject_prompts && prompts && prompts->length > 0;
  std::optional<ad::Var> shared;
  if (inject && prompts->generator) {
    shared = generate_prompts(bind, *prompts->generator, bind(embed_weight_));
  }
  const std::size_t np = inject ? prompts->length : 0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (inject) {
      ad::Var real = i == 0 ? tokens : ad::slice_first(tokens, np, m);
      tokens = ad::concat_first(prompt_tokens(bind, i, shared), real);
    }
    tokens = block_forward(bind, tokens, i, np);
  }
  if (inject) tokens = ad::slice_first(tokens, np, m);
  ad::Var out = ad::linear(tokens, bind(head_weight_), bind(head_bias_));
  return ad::unpatchify(out, config_.out_vars, config_.height, config_.width, config_.patch,
                        config_.patch);
}

Tensor Model::predict(const Tensor& x, const ForwardOptions& options) const {
  ad::Graph g(false);
  Binder bind(g, params_);
  return forward(bind, g.constant_ref(x), options).value();
}

}  // namespace wxpeft
