// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/config.hpp"

#include <charconv>
#include <functional>
#include <set>
#include <sstream>

#include "wxpeft/error.hpp"
#include "wxpeft/serialize.hpp"

namespace wxpeft {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string where(std::string_view origin, std::size_t line) {
  return std::string(origin) + ":" + std::to_string(line);
}

}  // namespace

std::vector<KeyValue> parse_key_values(std::string_view text, std::string_view origin) {
  std::vector<KeyValue> out;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(where(origin, line_no) + ": expected 'key = value'");
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where(origin, line_no) + ": empty key");
    for (char c : key) {
      const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                      c == '_' || c == '.' || c == '-';
      if (!ok) throw ConfigError(where(origin, line_no) + ": invalid key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw ConfigError(where(origin, line_no) + ": duplicate key '" + key + "'");
    }
    out.push_back({std::move(key), std::move(value), line_no});
  }
  return out;
}

double parse_double(std::string_view text, std::string_view what) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError(std::string(what) + ": '" + std::string(text) + "' is not a number");
  }
  return v;
}

std::uint64_t parse_uint(std::string_view text, std::string_view what) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError(std::string(what) + ": '" + std::string(text) +
                      "' is not a non-negative integer");
  }
  return v;
}

bool parse_bool(std::string_view text, std::string_view what) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(std::string(what) + ": '" + std::string(text) + "' is not a boolean");
}

std::vector<std::string> split_list(std::string_view text, char sep) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const auto next = text.find(sep, pos);
    out.emplace_back(trim(text.substr(pos, next == std::string_view::npos ? next : next - pos)));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ContractError("format_double failed");
  return std::string(buf, ptr);
}

std::size_t default_epochs(TaskKind task) {
  switch (task) {
    case TaskKind::downscale: return 30;
    case TaskKind::ensemble: return 10;
    case TaskKind::precip: return 15;
  }
  return 30;
}

double default_lr(TaskKind task) {
  switch (task) {
    case TaskKind::downscale: return 7e-4;
    case TaskKind::ensemble: return 1e-3;
    case TaskKind::precip: return 3e-3;
  }
  return 1e-3;
}

std::size_t default_prompt_len(TaskKind task) {
  switch (task) {
    case TaskKind::downscale: return 30;
    case TaskKind::ensemble: return 5;
    case TaskKind::precip: return 20;
  }
  return 30;
}

PeftOptions ExperimentConfig::peft_options() const {
  PeftOptions o;
  o.lora_rank = lora_rank;
  o.lora_alpha = lora_alpha;
  o.vpt_length = vpt_length;
  o.adaptformer_ratio = adaptformer_ratio;
  o.adaptformer_scale = adaptformer_scale;
  o.prompt_gate = prompt_gate;
  o.tadp = tadp;
  o.seed = seed;
  return o;
}

std::string ExperimentConfig::resolved_text() const {
  std::ostringstream s;
  auto kv = [&](const char* k, const std::string& v) { s << k << " = " << v << "\n"; };
  auto num = [&](const char* k, double v) { kv(k, format_double(v)); };
  auto cnt = [&](const char* k, std::size_t v) { kv(k, std::to_string(v)); };
  kv("task", std::string(to_string(task)));
  kv("method", std::string(to_string(method)));
  kv("seed", std::to_string(seed));
  kv("data", data.string());
  kv("out", out.string());
  if (!pretrained.empty()) kv("pretrained", pretrained.string());
  cnt("epochs", epochs);
  cnt("batch_size", batch_size);
  num("lr", lr);
  cnt("warmup_epochs", warmup_epochs);
  num("weight_decay", weight_decay);
  cnt("model.dim", model_dim);
  cnt("model.depth", model_depth);
  cnt("model.heads", model_heads);
  cnt("model.patch", model_patch);
  cnt("model.mlp_ratio", model_mlp_ratio);
  num("sfas.k", sfas_k);
  num("sfas.gamma", sfas_gamma);
  kv("sfas.mode", std::string(to_string(sfas_mode)));
  kv("sfas.exclude_norm_bias", sfas_exclude_norm_bias ? "true" : "false");
  cnt("tadp.prompt_len", tadp.prompt_len);
  cnt("tadp.hw_hidden", tadp.hw_hidden);
  cnt("tadp.v_hidden", tadp.v_hidden);
  cnt("tadp.d_hidden", tadp.d_hidden);
  cnt("tadp.e_hidden", tadp.e_hidden);
  cnt("lora.rank", lora_rank);
  num("lora.alpha", lora_alpha);
  cnt("vpt.length", vpt_length);
  num("adaptformer.ratio", adaptformer_ratio);
  num("adaptformer.scale", adaptformer_scale);
  kv("prompt.gate", std::string(to_string(prompt_gate)));
  std::string weights;
  for (std::size_t i = 0; i < loss_channel_weights.size(); ++i) {
    if (i) weights += ",";
    weights += format_double(loss_channel_weights[i]);
  }
  kv("loss.channel_weights", weights);
  num("eval.dry_threshold", eval_dry_threshold);
  return s.str();
}

ExperimentConfig make_config(const std::vector<KeyValue>& pairs, RunKind kind,
                             const std::filesystem::path& base_dir, std::string_view origin) {
  ExperimentConfig c;
  std::set<std::string, std::less<>> present;
  std::optional<std::string> task_text, method_text;
  auto path_of = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };

  using Setter = std::function<void(const std::string& v, const std::string& what)>;
  auto sz = [](std::size_t& dst) {
    return Setter([&dst](const std::string& v, const std::string& w) {
      dst = static_cast<std::size_t>(parse_uint(v, w));
    });
  };
  auto dbl = [](double& dst) {
    return Setter([&dst](const std::string& v, const std::string& w) { dst = parse_double(v, w); });
  };
  const std::map<std::string, Setter, std::less<>> setters{
      {"task", [&](const std::string& v, const std::string&) { task_text = v; }},
      {"method", [&](const std::string& v, const std::string&) { method_text = v; }},
      {"seed", [&](const std::string& v, const std::string& w) { c.seed = parse_uint(v, w); }},
      {"data", [&](const std::string& v, const std::string&) { c.data = path_of(v); }},
      {"out", [&](const std::string& v, const std::string&) { c.out = path_of(v); }},
      {"pretrained", [&](const std::string& v, const std::string&) { c.pretrained = path_of(v); }},
      {"epochs", sz(c.epochs)},
      {"batch_size", sz(c.batch_size)},
      {"lr", dbl(c.lr)},
      {"warmup_epochs", sz(c.warmup_epochs)},
      {"weight_decay", dbl(c.weight_decay)},
      {"model.dim", sz(c.model_dim)},
      {"model.depth", sz(c.model_depth)},
      {"model.heads", sz(c.model_heads)},
      {"model.patch", sz(c.model_patch)},
      {"model.mlp_ratio", sz(c.model_mlp_ratio)},
      {"sfas.k", dbl(c.sfas_k)},
      {"sfas.gamma", dbl(c.sfas_gamma)},
      {"sfas.mode", [&](const std::string& v, const std::string&) { c.sfas_mode = parse_fisher_mode(v); }},
      {"sfas.exclude_norm_bias",
       [&](const std::string& v, const std::string& w) { c.sfas_exclude_norm_bias = parse_bool(v, w); }},
      {"tadp.prompt_len", sz(c.tadp.prompt_len)},
      {"tadp.hw_hidden", sz(c.tadp.hw_hidden)},
      {"tadp.v_hidden", sz(c.tadp.v_hidden)},
      {"tadp.d_hidden", sz(c.tadp.d_hidden)},
      {"tadp.e_hidden", sz(c.tadp.e_hidden)},
      {"lora.rank", sz(c.lora_rank)},
      {"lora.alpha", dbl(c.lora_alpha)},
      {"vpt.length", sz(c.vpt_length)},
      {"adaptformer.ratio", dbl(c.adaptformer_ratio)},
      {"adaptformer.scale", dbl(c.adaptformer_scale)},
      {"prompt.gate", [&](const std::string& v, const std::string&) { c.prompt_gate = parse_prompt_gate(v); }},
      {"loss.channel_weights",
       [&](const std::string& v, const std::string& w) {
         c.loss_channel_weights.clear();
         for (const auto& item : split_list(v)) c.loss_channel_weights.push_back(parse_double(item, w));
       }},
      {"eval.dry_threshold", dbl(c.eval_dry_threshold)},
  };

  c.tadp.prompt_len = 0;
  for (const KeyValue& kv : pairs) {
    auto it = setters.find(kv.key);
    const std::string what = where(origin, kv.line) + ": " + kv.key;
    if (it == setters.end()) throw ConfigError(what + ": unknown key");
    it->second(kv.value, what);
    present.insert(kv.key);
  }

  std::vector<std::string> required{"task", "seed", "data", "out"};
  if (kind == RunKind::finetune) {
    required.push_back("method");
    required.push_back("pretrained");
  }
  for (const auto& key : required) {
    if (!present.count(key)) {
      throw ConfigError(std::string(origin) + ": missing required key '" + key + "'");
    }
  }
  c.task = parse_task(*task_text);
  if (method_text) c.method = parse_policy(*method_text);
  if (kind == RunKind::pretrain && c.method != Policy::full) {
    throw ConfigError(std::string(origin) + ": pretraining always uses method = full");
  }

  if (!present.count("epochs")) c.epochs = default_epochs(c.task);
  if (!present.count("lr")) c.lr = default_lr(c.task);
  if (!present.count("tadp.prompt_len")) c.tadp.prompt_len = default_prompt_len(c.task);
  if (c.epochs == 0) throw ConfigError(std::string(origin) + ": epochs must be positive");
  if (c.tadp.prompt_len == 0) {
    throw ConfigError(std::string(origin) + ": tadp.prompt_len must be positive");
  }
  if (c.batch_size == 0) throw ConfigError(std::string(origin) + ": batch_size must be positive");
  if (!(c.lr > 0.0)) throw ConfigError(std::string(origin) + ": lr must be positive");
  if (c.warmup_epochs >= c.epochs) {
    throw ConfigError(std::string(origin) + ": warmup_epochs must be smaller than epochs");
  }
  if (c.weight_decay < 0.0) throw ConfigError(std::string(origin) + ": weight_decay must be >= 0");
  topk_count(c.sfas_k, 1);
  if (c.sfas_gamma < 0.0) throw ConfigError(std::string(origin) + ": sfas.gamma must be >= 0");
  if (c.eval_dry_threshold < 0.0) {
    throw ConfigError(std::string(origin) + ": eval.dry_threshold must be >= 0");
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, RunKind kind) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const FileError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return make_config(parse_key_values(text, path.string()), kind, path.parent_path(),
                     path.string());
}

}  // namespace wxpeft
