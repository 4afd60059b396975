// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "wxpeft/autodiff.hpp"
#include "wxpeft/param_store.hpp"

namespace wxpeft {

/// Bottleneck adapter LN -> down -> GELU -> up over the last axis, without a
/// residual path. Fields are store indices.
struct Adapter {
  std::size_t width = 0;
  std::size_t hidden = 0;
  std::size_t norm_weight = 0, norm_bias = 0;
  std::size_t down_weight = 0, down_bias = 0;  // hidden x width
  std::size_t up_weight = 0, up_bias = 0;      // width x hidden

  /// Registers parameters under `prefix`; weights trunc-normal(0.02), biases
  /// zero, norm ones/zeros.
  static Adapter create(ParamStore& store, const std::string& prefix, std::size_t width,
                        std::size_t hidden, std::uint64_t seed, ParamGroup group);
};

ad::Var adapter_forward(Binder& bind, const Adapter& adapter, ad::Var x);

struct TadpConfig {
  std::size_t dim = 0;      // D
  std::size_t vars = 0;     // V
  std::size_t patch_h = 0;  // P_h
  std::size_t patch_w = 0;  // P_w
  std::size_t prompt_len = 30;
  std::size_t hw_hidden = 8;
  std::size_t v_hidden = 0;  // 0 picks ceil(V/2), capped at V-1 (min 1)
  std::size_t d_hidden = 16;
  std::size_t e_hidden = 16;

  std::size_t resolved_v_hidden() const;
};

/// Maps patch-embedding weights E [D x V x P_h x P_w] to P x D soft prompts.
struct PromptGenerator {
  TadpConfig config;
  Adapter adapter_hw, adapter_v, adapter_d;
  std::size_t w_q = 0, w_k = 0, w_v = 0;  // D x D, no bias
  std::size_t mlp_fc1_weight = 0, mlp_fc1_bias = 0;  // E_h x (V*P_h*P_w)
  std::size_t mlp_fc2_weight = 0, mlp_fc2_bias = 0;  // P x E_h

  /// Registers all generator parameters under the "tadp." prefix.
  static PromptGenerator create(ParamStore& store, const TadpConfig& config, std::uint64_t seed);
  std::size_t numel(const ParamStore& store) const;
};

/// E [D x V x P_h x P_w] -> E_D [V x P_hP_w x D].
ad::Var internal_patterns(Binder& bind, const PromptGenerator& gen, ad::Var embed_weight);
/// E_D [V x P_hP_w x D] -> E_P [P x D].
ad::Var external_integration(Binder& bind, const PromptGenerator& gen, ad::Var e_d);
ad::Var generate_prompts(Binder& bind, const PromptGenerator& gen, ad::Var embed_weight);

/// Trainable parameter count of a generator for the given config, without
/// building one.
std::size_t prompt_generator_param_count(const TadpConfig& config);

}  // namespace wxpeft
