// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "wxpeft/backbone.hpp"

namespace wxpeft {

enum class Policy {
  full,
  linear_probe,
  bias_only,
  lora,
  ssf,
  vpt,
  adaptformer,
  tadp_only,
  sfas_only,
  weatherpeft,
};

Policy parse_policy(std::string_view id);
std::string_view to_string(Policy policy);
/// Policies whose backbone updates go through the Fisher mask.
bool uses_sfas(Policy policy);
bool uses_tadp(Policy policy);

PromptGate parse_prompt_gate(std::string_view id);
std::string_view to_string(PromptGate gate);

struct PeftOptions {
  std::size_t lora_rank = 8;
  double lora_alpha = 1.0;
  std::size_t vpt_length = 50;
  double adaptformer_ratio = 0.25;
  double adaptformer_scale = 0.1;
  PromptGate prompt_gate = PromptGate::zero_init;
  /// Generator widths; dim/vars/patch are filled from the model.
  TadpConfig tadp;
  std::uint64_t seed = 0;
};

void attach_lora(Model& model, std::size_t rank, double alpha, std::uint64_t seed);
/// Folds (alpha/r)·B·A into the frozen Q/V weights, keeping a copy of the
/// originals for unmerge_lora().
void merge_lora(Model& model);
/// Restores the weights saved by merge_lora().
void unmerge_lora(Model& model);

void attach_ssf(Model& model);
void attach_adaptformer(Model& model, double ratio, double scale, std::uint64_t seed);
void attach_vpt(Model& model, std::size_t length, PromptGate gate, std::uint64_t seed);
void attach_tadp(Model& model, TadpConfig config, PromptGate gate, std::uint64_t seed);

struct TrainableReport {
  std::size_t embedding = 0;
  std::size_t backbone = 0;
  std::size_t head = 0;
  std::size_t peft = 0;
  std::size_t total = 0;
};

TrainableReport trainable_report(const ParamStore& store);

/// Attaches the policy's modules and sets trainable flags. Every policy
/// leaves the model's outputs unchanged at this point.
TrainableReport apply_policy(Model& model, Policy policy, const PeftOptions& options);

}  // namespace wxpeft
