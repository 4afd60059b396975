// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wxpeft/backbone.hpp"
#include "wxpeft/config.hpp"
#include "wxpeft/peft.hpp"
#include "wxpeft/serialize.hpp"
#include "wxpeft/sfas.hpp"
#include "wxpeft/tasks.hpp"

namespace wxpeft {

/// Linear warmup from 0, then half-cosine decay to 0.
double cosine_warmup_lr(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                        double base_lr);

struct MetricValue {
  std::string variable;
  std::string metric;
  double value = 0.0;  // NaN when the score is undefined for this split
  std::size_t n_samples = 0;
};

struct ResultsRow {
  std::string method;
  std::string task;
  std::uint64_t seed = 0;
  TrainableReport trainable;
  double train_loss_step0 = 0.0;
  double train_loss_final = 0.0;
  std::string freeze_audit = "n/a";  // pass, fail or n/a
  std::vector<MetricValue> metrics;
  std::string error;  // set by compare() when the run failed
};

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

ModelConfig model_config_for(const ExperimentConfig& config, const GridDataset& data);

/// Mean per-sample training loss of `model` on sample j.
double sample_loss(const Model& model, const GridDataset& data, std::size_t j,
                   const std::vector<double>& channel_weights = {});
/// Prediction in physical units, [out_channels x H x W]. Ensemble models
/// return the corrected mean followed by the corrected spread.
Tensor predict_sample(const Model& model, const GridDataset& data, std::size_t j);

struct TrainOutcome {
  std::vector<StepLog> log;
  std::vector<MaskStats> mask_stats;
  std::optional<bool> freeze_audit;
  std::size_t ever_selected = 0;
  std::vector<NamedTensor> optimizer_state;
};

/// Trains `model` in place for config.epochs. `policy` decides whether the
/// backbone update goes through the Fisher mask.
TrainOutcome train_model(Model& model, const GridDataset& data, const ExperimentConfig& config,
                         Policy policy);

std::vector<MetricValue> evaluate_model(const Model& model, const GridDataset& data, Split split,
                                        double dry_threshold = 0.1);

// Checkpoints hold every parameter by name, optional optimizer state, and
// meta.config / meta.kind so the model can be rebuilt.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const ExperimentConfig& config, RunKind kind,
                     const std::vector<NamedTensor>& optimizer_state = {});

struct LoadedModel {
  ExperimentConfig config;
  RunKind kind = RunKind::finetune;
  Model model;
};
LoadedModel load_checkpoint(const std::filesystem::path& path, const GridDataset& data);

/// Copies entries whose name and shape match from `entries` into `store`.
/// Returns how many were copied.
std::size_t load_matching(ParamStore& store, const std::vector<NamedTensor>& entries);

void pretrain(const ExperimentConfig& config);
ResultsRow finetune(const ExperimentConfig& config);
std::vector<MetricValue> evaluate_checkpoint(const std::filesystem::path& ckpt,
                                             const std::filesystem::path& data_dir, Split split);

/// Hash of the resolved config, the data manifest and the pretrained file.
std::string cache_key(const ExperimentConfig& config);

/// Runs (or reuses cached) fine-tuning runs and returns rows sorted by
/// method. Failures become rows with `error` set.
std::vector<ResultsRow> compare(const std::vector<std::filesystem::path>& configs);

std::string results_csv(const std::vector<ResultsRow>& rows);
std::vector<ResultsRow> read_results_csv(const std::filesystem::path& path);
std::string metrics_csv(const ResultsRow& row);
std::string metrics_csv(const std::string& method, const std::string& task, std::uint64_t seed,
                        const std::vector<MetricValue>& metrics);

struct MaskSummary {
  std::size_t steps = 0;
  std::size_t selected_min = 0;
  std::size_t selected_max = 0;
  double mean_overlap = 0.0;
  double final_noise_scale = 0.0;
};
/// Reads mask_stats.csv from a run directory.
MaskSummary mask_summary(const std::filesystem::path& run_dir);

}  // namespace wxpeft
