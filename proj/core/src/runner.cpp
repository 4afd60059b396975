// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "wxpeft/error.hpp"
#include "wxpeft/metrics.hpp"
#include "wxpeft/ops.hpp"
#include "wxpeft/optim.hpp"
#include "wxpeft/rng.hpp"

namespace wxpeft {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t steps_per_epoch(std::size_t n_train, std::size_t batch) {
  return (n_train + batch - 1) / batch;
}

Tensor channel(const Tensor& sample, std::size_t c) {
  const std::size_t h = sample.dim(1), w = sample.dim(2);
  std::vector<double> v(sample.data().begin() + c * h * w, sample.data().begin() + (c + 1) * h * w);
  return Tensor({1, h, w}, std::move(v));
}

// Mean over channels of loss_c, each weighted by w_c (default 1).
ad::Var channel_weighted(std::size_t channels, const std::vector<double>& weights,
                         const std::function<ad::Var(std::size_t)>& loss_c) {
  ad::Var total;
  for (std::size_t c = 0; c < channels; ++c) {
    ad::Var l = ad::scale(loss_c(c), weights[c] / static_cast<double>(channels));
    total = total.valid() ? ad::add(total, l) : l;
  }
  return total;
}

ad::Var loss_var(const Model& model, Binder& bind, const GridDataset& d, std::size_t j,
                 const std::vector<double>& weights) {
  ad::Graph& g = bind.graph();
  const Tensor xn = normalize(d.input(j), d.input_norm);
  ad::Var out = model.forward(bind, g.constant(xn));
  const std::size_t c_out = out.shape()[0];
  const bool weighted = !weights.empty();
  switch (d.task) {
    case TaskKind::downscale: {
      ad::Var pred = ad::add(out, g.constant(xn));
      const Tensor target = normalize(d.target(j), d.target_norm);
      if (!weighted) return ad::mse(pred, target);
      return channel_weighted(c_out, weights, [&](std::size_t c) {
        return ad::mse(ad::slice_first(pred, c, 1), channel(target, c));
      });
    }
    case TaskKind::ensemble: {
      const std::size_t v = c_out / 2;
      auto [mu, sigma] = gaussian_correction(ad::slice_first(out, 0, v), ad::slice_first(out, v, v),
                                             GridDataset::sample_of(*d.ens_mean, j),
                                             GridDataset::sample_of(*d.ens_std, j));
      const Tensor target = d.target(j);
      if (!weighted) return ad::crps_gaussian_mean(mu, sigma, target);
      return channel_weighted(v, weights, [&](std::size_t c) {
        return ad::crps_gaussian_mean(ad::slice_first(mu, c, 1), ad::slice_first(sigma, c, 1),
                                      channel(target, c));
      });
    }
    case TaskKind::precip: {
      const Tensor target = normalize(d.target(j), d.target_norm);
      if (!weighted) return ad::mae(out, target);
      return channel_weighted(c_out, weights, [&](std::size_t c) {
        return ad::mae(ad::slice_first(out, c, 1), channel(target, c));
      });
    }
  }
  throw ContractError("unknown task");
}

// Converts the gradient of a per-sample mean loss into the score of the
// per-sample negative log-likelihood: Gaussian (1/2 SSE) for MSE, Laplace
// (sum of |e|) for MAE, summed CRPS for the ensemble task.
double nll_scale(const GridDataset& d) {
  const double n = static_cast<double>(d.targets.numel() / d.size());
  return d.task == TaskKind::downscale ? 0.5 * n : n;
}

void check_weights(const std::vector<double>& weights, const GridDataset& d) {
  if (weights.empty()) return;
  if (weights.size() != d.targets.dim(1)) {
    throw ConfigError("loss.channel_weights has " + std::to_string(weights.size()) +
                      " entries, the task has " + std::to_string(d.targets.dim(1)) + " targets");
  }
}

std::string csv_double(double v) { return std::isnan(v) ? "nan" : format_double(v); }

double csv_parse_double(const std::string& s) {
  if (s == "nan") return kNaN;
  return parse_double(s, "csv");
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == ';') c = ';';
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(',', pos);
    out.push_back(line.substr(pos, next == std::string::npos ? next : next - pos));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

Tensor text_tensor(const std::string& text) {
  std::vector<double> v(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) v[i] = static_cast<unsigned char>(text[i]);
  return Tensor({text.size()}, std::move(v));
}

std::string tensor_text(const Tensor& t) {
  std::string s(t.numel(), '\0');
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double c = t[i];
    if (!(c >= 0.0 && c < 256.0) || c != std::floor(c)) throw FormatError("meta.config: bad character");
    s[i] = static_cast<char>(static_cast<unsigned char>(c));
  }
  return s;
}

Tensor model_meta(const ModelConfig& c) {
  return Tensor({9}, {double(c.in_vars), double(c.out_vars), double(c.height), double(c.width),
                      double(c.patch), double(c.dim), double(c.depth), double(c.heads),
                      double(c.mlp_ratio)});
}

void write_common(const std::filesystem::path& out, const ExperimentConfig& config,
                  const std::vector<StepLog>& log) {
  write_file(out / "config.resolved", config.resolved_text());
  std::string csv = "step,epoch,lr,loss\n";
  for (const StepLog& s : log) {
    csv += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," + csv_double(s.lr) + "," +
           csv_double(s.loss) + "\n";
  }
  write_file(out / "loss.csv", csv);
}

void make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FileError("cannot create directory " + dir.string() + ": " + ec.message());
}

Tensor stack_channel(const std::vector<Tensor>& samples, std::size_t c) {
  const std::size_t h = samples.front().dim(1), w = samples.front().dim(2);
  Tensor out({samples.size(), h, w});
  for (std::size_t j = 0; j < samples.size(); ++j) {
    const auto src = samples[j].data().subspan(c * h * w, h * w);
    std::copy(src.begin(), src.end(), out.data().begin() + j * h * w);
  }
  return out;
}

double guarded(const std::function<double()>& f) {
  try {
    return f();
  } catch (const UndefinedValueError&) {
    return kNaN;
  }
}

}  // namespace

double cosine_warmup_lr(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                        double base_lr) {
  if (step >= total_steps) {
    throw ConfigError("lr schedule: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + ")");
  }
  if (warmup_steps >= total_steps) {
    throw ConfigError("lr schedule: warmup steps must be fewer than total steps");
  }
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

ModelConfig model_config_for(const ExperimentConfig& config, const GridDataset& data) {
  ModelConfig m;
  m.in_vars = data.inputs.dim(1);
  m.out_vars = data.task == TaskKind::ensemble ? 2 * data.targets.dim(1) : data.targets.dim(1);
  m.height = data.height();
  m.width = data.width();
  m.patch = config.model_patch;
  m.dim = config.model_dim;
  m.depth = config.model_depth;
  m.heads = config.model_heads;
  m.mlp_ratio = config.model_mlp_ratio;
  m.validate();
  return m;
}

double sample_loss(const Model& model, const GridDataset& data, std::size_t j,
                   const std::vector<double>& channel_weights) {
  ad::Graph g(false);
  Binder bind(g, model.params());
  return loss_var(model, bind, data, j, channel_weights).value().item();
}

Tensor predict_sample(const Model& model, const GridDataset& d, std::size_t j) {
  const Tensor xn = normalize(d.input(j), d.input_norm);
  Tensor out = model.predict(xn);
  switch (d.task) {
    case TaskKind::downscale: {
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] += xn[i];
      return denormalize(out, d.target_norm);
    }
    case TaskKind::ensemble: {
      const std::size_t v = out.dim(0) / 2, hw = out.dim(1) * out.dim(2);
      Tensor o1({v, out.dim(1), out.dim(2)}), o2({v, out.dim(1), out.dim(2)});
      std::copy(out.data().begin(), out.data().begin() + v * hw, o1.data().begin());
      std::copy(out.data().begin() + v * hw, out.data().end(), o2.data().begin());
      auto [mu, sigma] = gaussian_correction(o1, o2, GridDataset::sample_of(*d.ens_mean, j),
                                             GridDataset::sample_of(*d.ens_std, j));
      std::copy(mu.data().begin(), mu.data().end(), out.data().begin());
      std::copy(sigma.data().begin(), sigma.data().end(), out.data().begin() + v * hw);
      return out;
    }
    case TaskKind::precip: {
      Tensor p = denormalize(out, d.target_norm);
      for (double& x : p.data()) x = std::max(0.0, x);
      return p;
    }
  }
  throw ContractError("unknown task");
}

TrainOutcome train_model(Model& model, const GridDataset& data, const ExperimentConfig& config,
                         Policy policy) {
  check_weights(config.loss_channel_weights, data);
  const std::size_t n_train = data.train_end;
  if (n_train == 0) throw ConfigError("dataset has no training samples");
  const std::size_t spe = steps_per_epoch(n_train, config.batch_size);
  const std::size_t total = spe * config.epochs;
  const std::size_t warmup = spe * config.warmup_epochs;

  ParamStore& store = model.params();
  AdamW opt(store, AdamWConfig{0.9, 0.999, 1e-8, config.weight_decay});
  std::optional<FisherState> fisher;
  std::optional<ParamStore> initial;
  if (uses_sfas(policy)) {
    fisher.emplace(store, SfasConfig{config.sfas_k, config.sfas_gamma, config.sfas_mode,
                                     config.sfas_exclude_norm_bias, config.seed},
                   total);
    initial = store;
  }

  TrainOutcome result;
  std::vector<std::size_t> order(n_train);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
    RngStream shuffle(config.seed, "shuffle", epoch);
    for (std::size_t i = n_train; i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    for (std::size_t b = 0; b < spe; ++b, ++step) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(n_train, begin + config.batch_size);
      GradList grads;
      std::vector<GradList> per_sample;
      double loss_sum = 0.0;
      for (std::size_t s = begin; s < end; ++s) {
        ad::Graph g;
        Binder bind(g, store);
        ad::Var loss = loss_var(model, bind, data, order[s], config.loss_channel_weights);
        loss_sum += loss.value().item();
        GradList sg = bind.gradients(g.backward(loss));
        accumulate(grads, sg);
        if (fisher) {
          GradList score = sg;
          scale_grads(score, nll_scale(data));
          per_sample.push_back(std::move(score));
        }
      }
      const double count = static_cast<double>(end - begin);
      scale_grads(grads, 1.0 / count);
      const double lr = cosine_warmup_lr(step, total, warmup, config.lr);
      result.log.push_back({step, epoch, lr, loss_sum / count});
      if (fisher) {
        result.mask_stats.push_back(fisher->select(per_sample));
        opt.step(store, grads, lr, &fisher->domain(), &fisher->mask());
        fisher->advance();
      } else {
        opt.step(store, grads, lr);
      }
    }
  }
  if (fisher) {
    result.freeze_audit = fisher->freeze_audit(*initial, store);
    const auto& ever = fisher->ever_selected();
    result.ever_selected = static_cast<std::size_t>(std::count(ever.begin(), ever.end(), 1));
  }
  result.optimizer_state = opt.state(store);
  return result;
}

std::vector<MetricValue> evaluate_model(const Model& model, const GridDataset& d, Split split,
                                        double dry_threshold) {
  const auto [begin, end] = d.range(split);
  if (begin >= end) throw ConfigError("split '" + std::string(to_string(split)) + "' is empty");
  const std::size_t n = end - begin;
  std::vector<Tensor> preds, truths;
  for (std::size_t j = begin; j < end; ++j) {
    preds.push_back(predict_sample(model, d, j));
    truths.push_back(d.target(j));
  }
  const Tensor weights = latitude_weights(std::vector<double>(d.lat.data().begin(), d.lat.data().end()));
  std::vector<MetricValue> out;
  auto add = [&](const std::string& var, const std::string& metric, double value) {
    out.push_back({var, metric, value, n});
  };

  switch (d.task) {
    case TaskKind::downscale:
      for (std::size_t c = 0; c < d.target_vars.size(); ++c) {
        const Tensor p = stack_channel(preds, c), t = stack_channel(truths, c);
        add(d.target_vars[c], "rmse", rmse_latweighted(p, t, weights));
        add(d.target_vars[c], "bias", mean_bias(p, t));
      }
      break;
    case TaskKind::ensemble: {
      const std::size_t v = d.target_vars.size();
      std::vector<Tensor> efis;
      for (std::size_t j = begin; j < end; ++j) efis.push_back(GridDataset::sample_of(*d.efi, j));
      for (std::size_t c = 0; c < v; ++c) {
        const Tensor mu = stack_channel(preds, c), sigma = stack_channel(preds, v + c);
        const Tensor t = stack_channel(truths, c);
        const Tensor crps = crps_gaussian_field(mu, sigma, t);
        double mean = 0.0;
        for (double x : crps.data()) mean += x;
        add(d.target_vars[c], "crps", mean / static_cast<double>(crps.numel()));
        add(d.target_vars[c], "eecrps", eecrps(crps, stack_channel(efis, c)));
      }
      break;
    }
    case TaskKind::precip: {
      std::vector<Tensor> train;
      for (std::size_t j = 0; j < d.train_end; ++j) train.push_back(d.target(j));
      for (std::size_t c = 0; c < d.target_vars.size(); ++c) {
        const Tensor p = stack_channel(preds, c), t = stack_channel(truths, c);
        const Tensor history = stack_channel(train, c);
        const Tensor clim = mean_field(history);
        const SeepsClimatology sc = seeps_climatology(history, dry_threshold);
        const std::string& var = d.target_vars[c];
        add(var, "seeps", guarded([&] { return seeps(p, t, sc, weights); }));
        add(var, "acc", guarded([&] { return acc(p, t, clim, weights); }));
        add(var, "rmse", rmse_latweighted(p, t, weights));
        const Tensor q50 = quantile_field(history, 0.5), q75 = quantile_field(history, 0.75);
        add(var, "ts_p50", guarded([&] { return threat_score(p, t, q50); }));
        add(var, "ts_p75", guarded([&] { return threat_score(p, t, q75); }));
      }
      break;
    }
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const ExperimentConfig& config, RunKind kind,
                     const std::vector<NamedTensor>& optimizer_state) {
  std::vector<NamedTensor> entries;
  for (const ParamEntry& e : model.params().entries()) entries.push_back({e.name, e.value});
  for (const NamedTensor& t : optimizer_state) entries.push_back(t);
  entries.push_back({"meta.config", text_tensor(config.resolved_text())});
  entries.push_back({"meta.kind", Tensor::scalar(kind == RunKind::pretrain ? 0.0 : 1.0)});
  entries.push_back({"meta.model", model_meta(model.config())});
  save_container(path, entries);
}

LoadedModel load_checkpoint(const std::filesystem::path& path, const GridDataset& data) {
  const auto entries = load_container(path);
  std::map<std::string, const Tensor*> by_name;
  for (const NamedTensor& e : entries) by_name[e.name] = &e.tensor;
  auto meta = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(path.string() + ": checkpoint lacks " + name);
    return *it->second;
  };
  const RunKind kind = meta("meta.kind").item() == 0.0 ? RunKind::pretrain : RunKind::finetune;
  const std::string text = tensor_text(meta("meta.config"));
  ExperimentConfig config = make_config(parse_key_values(text, path.string() + ":meta.config"),
                                        kind, {}, path.string() + ":meta.config");
  if (config.task != data.task) {
    throw ConfigError("checkpoint was trained for task '" + std::string(to_string(config.task)) +
                      "', data is '" + std::string(to_string(data.task)) + "'");
  }
  const ModelConfig mc = model_config_for(config, data);
  if (!(model_meta(mc) == meta("meta.model"))) {
    throw ConfigError("checkpoint model shape does not fit the dataset grid or variables");
  }
  LoadedModel out{config, kind, Model(mc, config.seed)};
  if (kind == RunKind::finetune) apply_policy(out.model, config.method, config.peft_options());
  ParamStore& store = out.model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    ParamEntry& e = store.entry(i);
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw FormatError(path.string() + ": missing parameter " + e.name);
    if (it->second->shape() != e.value.shape()) {
      throw FormatError(path.string() + ": parameter " + e.name + " has shape " +
                        shape_string(it->second->shape()) + ", expected " +
                        shape_string(e.value.shape()));
    }
    e.value = *it->second;
  }
  return out;
}

std::size_t load_matching(ParamStore& store, const std::vector<NamedTensor>& entries) {
  std::size_t copied = 0;
  for (const NamedTensor& e : entries) {
    if (e.name.starts_with("meta.") || e.name.find(".opt.") != std::string::npos ||
        e.name == "opt.step") {
      continue;
    }
    const auto idx = store.find(e.name);
    if (!idx || store.value(*idx).shape() != e.tensor.shape()) continue;
    store.value(*idx) = e.tensor;
    ++copied;
  }
  return copied;
}

void pretrain(const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const GridDataset data = load_dataset(config.data);
  if (data.task != config.task) throw ConfigError("data directory holds a different task");
  Model model(model_config_for(config, data), config.seed);
  apply_policy(model, Policy::full, config.peft_options());
  TrainOutcome outcome = train_model(model, data, config, Policy::full);
  make_dir(config.out);
  save_checkpoint(config.out / "pretrained.wpck", model, config, RunKind::pretrain,
                  outcome.optimizer_state);
  write_common(config.out, config, outcome.log);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file(config.out / "run_info.txt", "wall_time_s = " + format_double(wall) + "\n");
}

ResultsRow finetune(const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const GridDataset data = load_dataset(config.data);
  if (data.task != config.task) throw ConfigError("data directory holds a different task");
  Model model(model_config_for(config, data), config.seed);
  const auto pretrained = load_container(config.pretrained);
  if (load_matching(model.params(), pretrained) == 0) {
    throw ConfigError("pretrained checkpoint " + config.pretrained.string() +
                      " shares no parameters with this model");
  }
  ResultsRow row;
  row.method = std::string(to_string(config.method));
  row.task = std::string(to_string(config.task));
  row.seed = config.seed;
  row.trainable = apply_policy(model, config.method, config.peft_options());
  TrainOutcome outcome = train_model(model, data, config, config.method);
  if (!outcome.log.empty()) {
    row.train_loss_step0 = outcome.log.front().loss;
    row.train_loss_final = outcome.log.back().loss;
  }
  if (outcome.freeze_audit) row.freeze_audit = *outcome.freeze_audit ? "pass" : "fail";
  row.metrics = evaluate_model(model, data, Split::test, config.eval_dry_threshold);

  make_dir(config.out);
  save_checkpoint(config.out / "model.wpck", model, config, RunKind::finetune,
                  outcome.optimizer_state);
  write_common(config.out, config, outcome.log);
  write_file(config.out / "results.csv", results_csv({row}));
  write_file(config.out / "metrics.csv", metrics_csv(row));
  if (!outcome.mask_stats.empty()) {
    std::string csv = "step,selected,overlap,noise_scale,max_fisher,median_fisher\n";
    for (const MaskStats& m : outcome.mask_stats) {
      csv += std::to_string(m.step) + "," + std::to_string(m.selected) + "," +
             (m.overlap_with_prev ? csv_double(*m.overlap_with_prev) : "") + "," +
             csv_double(m.noise_scale) + "," + csv_double(m.max_fisher) + "," +
             csv_double(m.median_fisher) + "\n";
    }
    write_file(config.out / "mask_stats.csv", csv);
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::string info = "wall_time_s = " + format_double(wall) + "\n";
  if (outcome.freeze_audit) info += "ever_selected = " + std::to_string(outcome.ever_selected) + "\n";
  write_file(config.out / "run_info.txt", info);
  write_file(config.out / "cache.key", cache_key(config) + "\n");
  return row;
}

std::vector<MetricValue> evaluate_checkpoint(const std::filesystem::path& ckpt,
                                             const std::filesystem::path& data_dir, Split split) {
  const GridDataset data = load_dataset(data_dir);
  const LoadedModel loaded = load_checkpoint(ckpt, data);
  return evaluate_model(loaded.model, data, split, loaded.config.eval_dry_threshold);
}

std::string cache_key(const ExperimentConfig& config) {
  std::string blob = config.resolved_text();
  blob += "\n--manifest--\n";
  blob += read_file(config.data / "manifest.txt");
  blob += "\n--pretrained--\n";
  blob += file_hash(config.pretrained);
  return hex64(fnv1a64(blob));
}

std::vector<ResultsRow> compare(const std::vector<std::filesystem::path>& configs) {
  std::vector<ResultsRow> rows;
  for (const auto& path : configs) {
    try {
      const ExperimentConfig config = load_config(path, RunKind::finetune);
      const auto key_file = config.out / "cache.key";
      bool reused = false;
      if (std::filesystem::exists(key_file) && std::filesystem::exists(config.out / "results.csv") &&
          std::filesystem::exists(config.out / "model.wpck")) {
        std::string stored = read_file(key_file);
        while (!stored.empty() && (stored.back() == '\n' || stored.back() == '\r')) stored.pop_back();
        if (stored == cache_key(config)) {
          auto cached = read_results_csv(config.out / "results.csv");
          if (cached.size() == 1) {
            rows.push_back(std::move(cached.front()));
            reused = true;
          }
        }
      }
      if (!reused) rows.push_back(finetune(config));
    } catch (const std::exception& e) {
      ResultsRow failed;
      failed.method = path.stem().string();
      failed.error = e.what();
      rows.push_back(std::move(failed));
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ResultsRow& a, const ResultsRow& b) {
    if (a.method != b.method) return a.method < b.method;
    if (a.task != b.task) return a.task < b.task;
    return a.seed < b.seed;
  });
  return rows;
}

namespace {

const std::vector<std::string> kFixedColumns = {
    "method", "task", "seed", "trainable_params_embedding", "trainable_params_backbone",
    "trainable_params_head", "trainable_params_peft", "trainable_params_total",
    "train_loss_step0", "train_loss_final", "freeze_audit"};

}  // namespace

std::string results_csv(const std::vector<ResultsRow>& rows) {
  std::vector<std::string> metric_cols;
  for (const ResultsRow& r : rows) {
    for (const MetricValue& m : r.metrics) {
      const std::string col = m.variable + "/" + m.metric;
      if (std::find(metric_cols.begin(), metric_cols.end(), col) == metric_cols.end()) {
        metric_cols.push_back(col);
      }
    }
  }
  std::string out;
  for (const auto& c : kFixedColumns) out += c + ",";
  for (const auto& c : metric_cols) out += c + ",";
  out += "error\n";
  for (const ResultsRow& r : rows) {
    out += r.method + "," + r.task + "," + std::to_string(r.seed) + ",";
    if (r.error.empty()) {
      for (std::size_t v : {r.trainable.embedding, r.trainable.backbone, r.trainable.head,
                            r.trainable.peft, r.trainable.total}) {
        out += std::to_string(v) + ",";
      }
      out += csv_double(r.train_loss_step0) + "," + csv_double(r.train_loss_final) + "," +
             r.freeze_audit + ",";
    } else {
      out += ",,,,,,,,";
    }
    for (const auto& c : metric_cols) {
      for (const MetricValue& m : r.metrics) {
        if (m.variable + "/" + m.metric == c) {
          out += csv_double(m.value);
          break;
        }
      }
      out += ",";
    }
    out += sanitize(r.error) + "\n";
  }
  return out;
}

std::vector<ResultsRow> read_results_csv(const std::filesystem::path& path) {
  const auto lines = lines_of(read_file(path));
  if (lines.empty()) throw FormatError(path.string() + ": empty results file");
  const auto header = split_line(lines.front());
  if (header.size() < kFixedColumns.size() + 1 ||
      !std::equal(kFixedColumns.begin(), kFixedColumns.end(), header.begin()) ||
      header.back() != "error") {
    throw FormatError(path.string() + ": unexpected results header");
  }
  std::vector<ResultsRow> rows;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto f = split_line(lines[li]);
    if (f.size() != header.size()) {
      throw FormatError(path.string() + ": line " + std::to_string(li + 1) + " has " +
                        std::to_string(f.size()) + " fields, expected " +
                        std::to_string(header.size()));
    }
    try {
      ResultsRow r;
      r.method = f[0];
      r.task = f[1];
      r.seed = parse_uint(f[2], "seed");
      r.error = f.back();
      if (r.error.empty()) {
        r.trainable.embedding = parse_uint(f[3], "csv");
        r.trainable.backbone = parse_uint(f[4], "csv");
        r.trainable.head = parse_uint(f[5], "csv");
        r.trainable.peft = parse_uint(f[6], "csv");
        r.trainable.total = parse_uint(f[7], "csv");
        r.train_loss_step0 = csv_parse_double(f[8]);
        r.train_loss_final = csv_parse_double(f[9]);
        r.freeze_audit = f[10];
      }
      for (std::size_t c = kFixedColumns.size(); c + 1 < header.size(); ++c) {
        if (f[c].empty()) continue;
        const auto slash = header[c].find('/');
        if (slash == std::string::npos) throw FormatError("bad metric column " + header[c]);
        r.metrics.push_back({header[c].substr(0, slash), header[c].substr(slash + 1),
                             csv_parse_double(f[c]), 0});
      }
      rows.push_back(std::move(r));
    } catch (const ConfigError& e) {
      throw FormatError(path.string() + ": line " + std::to_string(li + 1) + ": " + e.what());
    }
  }
  return rows;
}

std::string metrics_csv(const std::string& method, const std::string& task, std::uint64_t seed,
                        const std::vector<MetricValue>& metrics) {
  std::string out = "method,task,variable,metric,value,n_samples,seed\n";
  for (const MetricValue& m : metrics) {
    out += method + "," + task + "," + m.variable + "," + m.metric + "," + csv_double(m.value) +
           "," + std::to_string(m.n_samples) + "," + std::to_string(seed) + "\n";
  }
  return out;
}

std::string metrics_csv(const ResultsRow& row) {
  return metrics_csv(row.method, row.task, row.seed, row.metrics);
}

MaskSummary mask_summary(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "mask_stats.csv";
  if (!std::filesystem::exists(path)) {
    throw FileError(run_dir.string() + " has no mask_stats.csv (not an SFAS run?)");
  }
  const auto lines = lines_of(read_file(path));
  if (lines.empty() || lines.front() != "step,selected,overlap,noise_scale,max_fisher,median_fisher") {
    throw FormatError(path.string() + ": unexpected header");
  }
  MaskSummary s;
  s.selected_min = std::numeric_limits<std::size_t>::max();
  double overlap_sum = 0.0;
  std::size_t overlap_n = 0;
  try {
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto f = split_line(lines[i]);
      if (f.size() != 6) throw FormatError(path.string() + ": line " + std::to_string(i + 1) + " malformed");
      const auto sel = static_cast<std::size_t>(parse_uint(f[1], "selected"));
      s.selected_min = std::min(s.selected_min, sel);
      s.selected_max = std::max(s.selected_max, sel);
      if (!f[2].empty()) {
        overlap_sum += csv_parse_double(f[2]);
        ++overlap_n;
      }
      s.final_noise_scale = csv_parse_double(f[3]);
      ++s.steps;
    }
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (s.steps == 0) s.selected_min = 0;
  s.mean_overlap = overlap_n ? overlap_sum / static_cast<double>(overlap_n) : kNaN;
  return s;
}

}  // namespace wxpeft
