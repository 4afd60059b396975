// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "wxpeft/autodiff.hpp"
#include "wxpeft/param_store.hpp"
#include "wxpeft/tadp.hpp"

namespace wxpeft {

struct ModelConfig {
  std::size_t in_vars = 0;   // V
  std::size_t out_vars = 0;  // output channels
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t patch = 4;
  std::size_t dim = 32;
  std::size_t depth = 4;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 4;

  /// Throws ConfigError on indivisible grids or head counts.
  void validate() const;
  std::size_t tokens() const { return (height / patch) * (width / patch); }
  std::size_t patch_in() const { return in_vars * patch * patch; }
  std::size_t patch_out() const { return out_vars * patch * patch; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Closed-form parameter counts of the plain model.
std::size_t embedding_param_count(const ModelConfig& c);
std::size_t block_param_count(const ModelConfig& c);
std::size_t head_param_count(const ModelConfig& c);
std::size_t model_param_count(const ModelConfig& c);

/// Fixed sinusoidal position encoding, tokens x dim.
Tensor sinusoidal_encoding(std::size_t tokens, std::size_t dim);

struct BlockParams {
  std::size_t norm1_weight, norm1_bias;
  std::size_t q_weight, q_bias, k_weight, k_bias, v_weight, v_bias, o_weight, o_bias;
  std::size_t norm2_weight, norm2_bias;
  std::size_t fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

// Optional modules attached by fine-tuning policies. Indices refer to the
// model's ParamStore.

struct LoraAttachment {
  struct Pair {
    std::size_t a;  // rank x in
    std::size_t b;  // out x rank
  };
  std::size_t rank = 8;
  double alpha = 1.0;
  std::vector<Pair> q, v;  // one per block
  bool merged = false;
  std::vector<Tensor> saved_q, saved_v;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

enum class SsfSite { norm1, q, k, v, proj, norm2, fc1, fc2 };
inline constexpr std::size_t kSsfSites = 8;

struct SsfAttachment {
  struct Point {
    std::size_t scale, shift;
  };
  std::vector<std::array<Point, kSsfSites>> blocks;
};

struct AdaptFormerAttachment {
  struct Block {
    std::size_t down_weight, down_bias, up_weight, up_bias;
  };
  std::size_t hidden = 0;
  double scale = 0.1;
  std::vector<Block> blocks;
};

/// How prompt keys enter attention. `none` is plain concatenation into one
/// softmax. `zero_init` gives prompt keys their own softmax whose output is
/// scaled by a learnable per-block, per-head gate starting at zero.
enum class PromptGate { none, zero_init };

struct PromptAttachment {
  std::size_t length = 0;
  PromptGate gate = PromptGate::zero_init;
  std::optional<std::size_t> gates;         // depth x heads
  std::optional<std::size_t> vpt_prompts;   // depth x length x dim
  std::optional<PromptGenerator> generator; // shared prompts from E
};

struct ForwardOptions {
  bool inject_prompts = true;
};

class Model {
 public:
  /// Builds and initializes the plain model: embedding, blocks, head.
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  std::size_t embed_weight() const noexcept { return embed_weight_; }
  std::size_t embed_bias() const noexcept { return embed_bias_; }
  std::size_t head_weight() const noexcept { return head_weight_; }
  std::size_t head_bias() const noexcept { return head_bias_; }
  const BlockParams& block(std::size_t i) const { return blocks_.at(i); }

  /// X [V x H x W] -> tokens [M x D].
  ad::Var embed(Binder& bind, ad::Var x) const;
  /// One pre-norm block over tokens [N x D]; the first `n_prompt` rows are
  /// prompt tokens.
  ad::Var block_forward(Binder& bind, ad::Var tokens, std::size_t index,
                        std::size_t n_prompt = 0) const;
  /// X [V x H x W] -> Y [out_vars x H x W].
  ad::Var forward(Binder& bind, ad::Var x, const ForwardOptions& options = {}) const;
  /// Forward without recording gradients.
  Tensor predict(const Tensor& x, const ForwardOptions& options = {}) const;

  std::optional<LoraAttachment> lora;
  std::optional<SsfAttachment> ssf;
  std::optional<AdaptFormerAttachment> adaptformer;
  std::optional<PromptAttachment> prompts;

 private:
  ad::Var apply_ssf(Binder& bind, ad::Var x, std::size_t block, SsfSite site) const;
  ad::Var attention(Binder& bind, ad::Var h, std::size_t index, std::size_t n_prompt) const;
  ad::Var prompt_tokens(Binder& bind, std::size_t index, const std::optional<ad::Var>& shared) const;

  ModelConfig config_;
  ParamStore params_;
  Tensor pos_encoding_;
  std::size_t embed_weight_ = 0, embed_bias_ = 0;
  std::vector<BlockParams> blocks_;
  std::size_t head_weight_ = 0, head_bias_ = 0;
};

}  // namespace wxpeft
