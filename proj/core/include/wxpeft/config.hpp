// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wxpeft/peft.hpp"
#include "wxpeft/sfas.hpp"
#include "wxpeft/tasks.hpp"

namespace wxpeft {

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Parses UTF-8 `key = value` lines. Blank lines and `#` comments are
/// skipped; keys may be dotted. Duplicate keys and lines without `=` raise
/// ConfigError naming `origin` and the line.
std::vector<KeyValue> parse_key_values(std::string_view text, std::string_view origin);

double parse_double(std::string_view text, std::string_view what);
std::uint64_t parse_uint(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);
std::vector<std::string> split_list(std::string_view text, char sep = ',');
/// Shortest text that parses back to the same double.
std::string format_double(double v);

struct ExperimentConfig {
  TaskKind task = TaskKind::downscale;
  Policy method = Policy::full;
  std::uint64_t seed = 0;
  std::filesystem::path data;
  std::filesystem::path out;
  std::filesystem::path pretrained;

  std::size_t epochs = 0;
  std::size_t batch_size = 8;
  double lr = 0.0;
  std::size_t warmup_epochs = 3;
  double weight_decay = 0.05;

  std::size_t model_dim = 32;
  std::size_t model_depth = 4;
  std::size_t model_heads = 2;
  std::size_t model_patch = 4;
  std::size_t model_mlp_ratio = 4;

  double sfas_k = 0.001;
  double sfas_gamma = 0.2;
  FisherMode sfas_mode = FisherMode::per_sample;
  bool sfas_exclude_norm_bias = false;

  TadpConfig tadp;  // prompt_len 0 until resolved from the task
  std::size_t lora_rank = 8;
  double lora_alpha = 1.0;
  std::size_t vpt_length = 50;
  double adaptformer_ratio = 0.25;
  double adaptformer_scale = 0.1;
  PromptGate prompt_gate = PromptGate::zero_init;

  std::vector<double> loss_channel_weights;  // empty: all ones
  double eval_dry_threshold = 0.1;

  /// Canonical `key = value` text of every setting, defaults included.
  std::string resolved_text() const;
  PeftOptions peft_options() const;
};

enum class RunKind { pretrain, finetune };

/// Builds a config from parsed pairs; unknown keys and missing required keys
/// raise ConfigError. Relative paths resolve against `base_dir`.
ExperimentConfig make_config(const std::vector<KeyValue>& pairs, RunKind kind,
                             const std::filesystem::path& base_dir = {},
                             std::string_view origin = "config");
ExperimentConfig load_config(const std::filesystem::path& path, RunKind kind);

/// Per-task defaults for epochs, learning rate and prompt length.
std::size_t default_epochs(TaskKind task);
double default_lr(TaskKind task);
std::size_t default_prompt_len(TaskKind task);

}  // namespace wxpeft
