// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "wxpeft/config.hpp"
#include "wxpeft/error.hpp"
#include "wxpeft/runner.hpp"
#include "wxpeft/serialize.hpp"
#include "wxpeft/tasks.hpp"

namespace {

using namespace wxpeft;

int run_gen(const std::string& task, std::uint64_t seed, const std::string& out, bool source,
            std::size_t n) {
  GridDataset d;
  switch (parse_task(task)) {
    case TaskKind::downscale: {
      DownscaleOptions o;
      o.n = n;
      o.source = source;
      d = gen_downscale(seed, o);
      break;
    }
    case TaskKind::ensemble: {
      EnsembleOptions o;
      o.n = n;
      o.source = source;
      d = gen_ensemble(seed, o);
      break;
    }
    case TaskKind::precip: {
      PrecipOptions o;
      o.n = n;
      o.source = source;
      d = gen_precip(seed, o);
      break;
    }
  }
  save_dataset(out, d);
  std::cout << "wrote " << d.size() << " " << task << " samples to " << out << "\n";
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data_dir, const std::string& split) {
  const GridDataset data = load_dataset(data_dir);
  const LoadedModel loaded = load_checkpoint(ckpt, data);
  const auto metrics = evaluate_model(loaded.model, data, parse_split(split),
                                      loaded.config.eval_dry_threshold);
  const std::string method = loaded.kind == RunKind::pretrain
                                 ? std::string("pretrained")
                                 : std::string(to_string(loaded.config.method));
  std::cout << metrics_csv(method, std::string(to_string(data.task)), loaded.config.seed, metrics);
  return 0;
}

int run_compare(const std::vector<std::string>& configs, const std::string& out) {
  if (configs.size() < 2) throw ConfigError("compare needs at least two configs");
  std::vector<std::filesystem::path> paths(configs.begin(), configs.end());
  const auto rows = compare(paths);
  const std::string csv = results_csv(rows);
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_file(out, csv);
  }
  for (const auto& r : rows) {
    if (!r.error.empty()) std::cerr << "compare: " << r.method << ": " << r.error << "\n";
  }
  return 0;
}

int run_mask_stats(const std::string& run) {
  const MaskSummary s = mask_summary(run);
  std::cout << "steps = " << s.steps << "\n"
            << "selected_min = " << s.selected_min << "\n"
            << "selected_max = " << s.selected_max << "\n"
            << "mean_overlap = " << (std::isnan(s.mean_overlap) ? "nan" : format_double(s.mean_overlap))
            << "\n"
            << "final_noise_scale = " << format_double(s.final_noise_scale) << "\n";
  const auto info = std::filesystem::path(run) / "run_info.txt";
  if (std::filesystem::exists(info)) {
    for (const auto& kv : parse_key_values(read_file(info), info.string())) {
      if (kv.key == "ever_selected") std::cout << "ever_selected = " << kv.value << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wxpeft: parameter-efficient fine-tuning of a toy weather transformer"};
  app.require_subcommand(1);

  std::string task, out, config, ckpt, data, split = "test", compare_out, run;
  std::uint64_t seed = 0;
  std::size_t n = 100;
  bool source = false;
  std::vector<std::string> configs;

  auto* gen = app.add_subcommand("gen", "generate a synthetic task dataset");
  gen->add_option("--task", task, "downscale, ensemble or precip")->required();
  gen->add_option("--seed", seed, "generator seed")->required();
  gen->add_option("--out", out, "output directory")->required();
  gen->add_flag("--source", source, "use the pretraining (source) physics family");
  gen->add_option("--n", n, "number of samples");

  auto* pre = app.add_subcommand("pretrain", "train the backbone on a source dataset");
  pre->add_option("--config", config, "config file")->required();

  auto* train = app.add_subcommand("train", "fine-tune a pretrained checkpoint");
  train->add_option("--config", config, "config file")->required();

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset split");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--split", split, "train, val or test");

  auto* cmp = app.add_subcommand("compare", "run several fine-tuning configs and merge results");
  cmp->add_option("--configs", configs, "config files")->required();
  cmp->add_option("--out", compare_out, "merged CSV path (default stdout)");

  auto* mask = app.add_subcommand("mask-stats", "summarize the Fisher masks of a run");
  mask->add_option("--run", run, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return run_gen(task, seed, out, source, n);
    if (*pre) {
      pretrain(load_config(config, RunKind::pretrain));
      return 0;
    }
    if (*train) {
      const ResultsRow row = finetune(load_config(config, RunKind::finetune));
      std::cout << results_csv({row});
      return 0;
    }
    if (*eval) return run_eval(ckpt, data, split);
    if (*cmp) return run_compare(configs, compare_out);
    if (*mask) return run_mask_stats(run);
  } catch (const Error& e) {
    std::cerr << "wxpeft: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "wxpeft: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
