// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "wxpeft/config.hpp"
#include "wxpeft/error.hpp"
#include "wxpeft/runner.hpp"
#include "wxpeft/serialize.hpp"

namespace wxpeft {
namespace {

namespace fs = std::filesystem;

TEST(Schedule, CosineWithWarmup) {
  EXPECT_EQ(cosine_warmup_lr(0, 10, 2, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(cosine_warmup_lr(1, 10, 2, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(cosine_warmup_lr(2, 10, 2, 1.0), 1.0);
  EXPECT_NEAR(cosine_warmup_lr(6, 10, 2, 1.0), 0.5, 1e-15);
  EXPECT_NEAR(cosine_warmup_lr(9, 10, 2, 2.0), 1.0 + std::cos(std::numbers::pi * 7.0 / 8.0), 1e-15);
  EXPECT_DOUBLE_EQ(cosine_warmup_lr(0, 4, 0, 3.0), 3.0);
  EXPECT_THROW(cosine_warmup_lr(10, 10, 2, 1.0), ConfigError);
  EXPECT_THROW(cosine_warmup_lr(0, 10, 10, 1.0), ConfigError);
}

class RunnerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::path(::testing::TempDir()) / "wxpeft_runner";
    fs::remove_all(root_);
    save_dataset(root_ / "data", gen_downscale(1, {.n = 10, .height = 16, .width = 16}));
    write_file(root_ / "pre.cfg", common("task = downscale\nout = pre\n"));
    pretrain(load_config(root_ / "pre.cfg", RunKind::pretrain));
  }

  static std::string common(const std::string& extra) {
    return extra +
           "seed = 4\ndata = data\nepochs = 2\nwarmup_epochs = 1\nbatch_size = 4\n"
           "model.dim = 16\nmodel.depth = 2\ntadp.prompt_len = 3\nsfas.k = 0.05\n";
  }

  static fs::path write_cfg(const std::string& name, const std::string& method,
                            const std::string& extra = "") {
    const fs::path p = root_ / (name + ".cfg");
    write_file(p, common("task = downscale\nmethod = " + method + "\nout = runs/" + name +
                         "\npretrained = pre/pretrained.wpck\n" + extra));
    return p;
  }

  static ResultsRow run(const std::string& name, const std::string& method,
                        const std::string& extra = "") {
    return finetune(load_config(write_cfg(name, method, extra), RunKind::finetune));
  }

  static fs::path root_;
};

fs::path RunnerTest::root_;

TEST_F(RunnerTest, PretrainWritesArtifacts) {
  for (const char* f : {"pretrained.wpck", "config.resolved", "loss.csv", "run_info.txt"}) {
    EXPECT_TRUE(fs::exists(root_ / "pre" / f)) << f;
  }
}

TEST_F(RunnerTest, LinearProbeLeavesBackboneUntouched) {
  const ResultsRow row = run("probe", "linear_probe");
  EXPECT_EQ(row.freeze_audit, "n/a");
  EXPECT_EQ(row.trainable.backbone, 0u);
  const auto pre = load_container(root_ / "pre" / "pretrained.wpck");
  const auto post = load_container(root_ / "runs/probe/model.wpck");
  std::size_t compared = 0;
  for (const auto& a : pre) {
    if (a.name.starts_with("meta.") || a.name.find(".opt.") != std::string::npos ||
        a.name.starts_with("head.") || a.name == "opt.step") {
      continue;
    }
    for (const auto& b : post) {
      if (b.name == a.name) {
        EXPECT_TRUE(a.tensor.bit_equal(b.tensor)) << a.name;
        ++compared;
      }
    }
  }
  EXPECT_GT(compared, 10u);
}

TEST_F(RunnerTest, StepZeroLossIsSharedAcrossPolicies) {
  const ResultsRow full = run("full0", "full");
  const ResultsRow wp = run("wp0", "weatherpeft");
  const ResultsRow lora = run("lora0", "lora");
  EXPECT_EQ(full.train_loss_step0, wp.train_loss_step0);
  EXPECT_EQ(full.train_loss_step0, lora.train_loss_step0);
  EXPECT_EQ(wp.freeze_audit, "pass");
  EXPECT_TRUE(fs::exists(root_ / "runs/wp0/mask_stats.csv"));
  const MaskSummary s = mask_summary(root_ / "runs/wp0");
  EXPECT_EQ(s.steps, 4u);
  EXPECT_EQ(s.selected_min, s.selected_max);
  EXPECT_EQ(s.final_noise_scale, noise_scale(0.2, 3, 4));
  EXPECT_THROW(mask_summary(root_ / "runs/full0"), FileError);
}

TEST_F(RunnerTest, RerunIsByteIdentical) {
  run("det_a", "weatherpeft");
  run("det_b", "weatherpeft");
  const fs::path a = root_ / "runs/det_a", b = root_ / "runs/det_b";
  EXPECT_EQ(read_file(a / "results.csv"), read_file(b / "results.csv"));
  EXPECT_EQ(read_file(a / "mask_stats.csv"), read_file(b / "mask_stats.csv"));
  EXPECT_EQ(read_file(a / "loss.csv"), read_file(b / "loss.csv"));
  const std::string hash = file_hash(a / "model.wpck");
  run("det_a", "weatherpeft");
  EXPECT_EQ(file_hash(a / "model.wpck"), hash);
}

TEST_F(RunnerTest, CheckpointEvaluationMatchesRun) {
  const ResultsRow row = run("eval", "ssf");
  const auto metrics = evaluate_checkpoint(root_ / "runs/eval/model.wpck", root_ / "data", Split::test);
  ASSERT_EQ(metrics.size(), row.metrics.size());
  ASSERT_EQ(metrics.size(), 6u);
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    EXPECT_EQ(metrics[i].variable, row.metrics[i].variable);
    EXPECT_EQ(metrics[i].metric, row.metrics[i].metric);
    EXPECT_EQ(metrics[i].value, row.metrics[i].value);
    EXPECT_EQ(metrics[i].n_samples, 1u);
  }
  const auto val = evaluate_checkpoint(root_ / "runs/eval/model.wpck", root_ / "data", Split::val);
  EXPECT_EQ(val.size(), 6u);
}

TEST_F(RunnerTest, CheckpointForOtherTaskIsRejected) {
  save_dataset(root_ / "precip", gen_precip(1, {.n = 10, .height = 16, .width = 16}));
  EXPECT_THROW(evaluate_checkpoint(root_ / "pre/pretrained.wpck", root_ / "precip", Split::test),
               ConfigError);
}

TEST_F(RunnerTest, CompareReusesCachedRuns) {
  const fs::path a = write_cfg("cmp_lp", "linear_probe");
  const fs::path b = write_cfg("cmp_bias", "bias_only");
  const auto first = compare({a, b, root_ / "absent.cfg"});
  ASSERT_EQ(first.size(), 3u);
  EXPECT_EQ(first[0].method, "absent");
  EXPECT_FALSE(first[0].error.empty());
  EXPECT_EQ(first[1].method, "bias_only");
  EXPECT_EQ(first[2].method, "linear_probe");
  const auto stamp = fs::last_write_time(root_ / "runs/cmp_lp/model.wpck");
  const auto second = compare({b, a});
  EXPECT_EQ(results_csv(second), results_csv({first[1], first[2]}));
  EXPECT_EQ(fs::last_write_time(root_ / "runs/cmp_lp/model.wpck"), stamp);
  write_cfg("cmp_lp", "linear_probe", "lr = 0.002\n");
  compare({a});
  EXPECT_NE(fs::last_write_time(root_ / "runs/cmp_lp/model.wpck"), stamp);
}

TEST_F(RunnerTest, ResultsCsvRoundTrip) {
  const ResultsRow row = run("csv", "adaptformer");
  const auto back = read_results_csv(root_ / "runs/csv/results.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(results_csv(back), results_csv({row}));
  const std::string text = read_file(root_ / "runs/csv/results.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "method,task,seed,trainable_params_embedding,trainable_params_backbone,"
            "trainable_params_head,trainable_params_peft,trainable_params_total,train_loss_step0,"
            "train_loss_final,freeze_audit,t2m/rmse,t2m/bias,u10/rmse,u10/bias,v10/rmse,v10/bias,error");
}

TEST(Evaluation, MetricSetsPerTask) {
  ExperimentConfig cfg;
  cfg.model_dim = 8;
  cfg.model_depth = 1;
  const GridDataset e = gen_ensemble(2, {.n = 10, .height = 8, .width = 8});
  cfg.task = TaskKind::ensemble;
  const Model me(model_config_for(cfg, e), 1);
  const auto em = evaluate_model(me, e, Split::test);
  ASSERT_EQ(em.size(), 4u);
  EXPECT_EQ(em[0].metric, "crps");
  EXPECT_EQ(em[1].metric, "eecrps");
  const GridDataset p = gen_precip(2, {.n = 10, .height = 8, .width = 8});
  cfg.task = TaskKind::precip;
  const Model mp(model_config_for(cfg, p), 1);
  const auto pm = evaluate_model(mp, p, Split::test);
  ASSERT_EQ(pm.size(), 15u);
  EXPECT_EQ(pm[0].variable, "tp_lead1");
  EXPECT_EQ(pm[0].metric, "seeps");
  EXPECT_EQ(pm[4].metric, "ts_p75");
  const Tensor pred = predict_sample(me, e, 0);
  EXPECT_EQ(pred.shape(), (Shape{4, 8, 8}));
  for (std::size_t i = 2 * 64; i < pred.numel(); ++i) EXPECT_GT(pred[i], 0.0);
}

}  // namespace
}  // namespace wxpeft
