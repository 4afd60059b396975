// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/peft.hpp"

#include <array>
#include <cmath>

#include "wxpeft/error.hpp"

namespace wxpeft {

namespace {

constexpr std::array<std::pair<std::string_view, Policy>, 10> kPolicies{{
    {"full", Policy::full},
    {"linear_probe", Policy::linear_probe},
    {"bias_only", Policy::bias_only},
    {"lora", Policy::lora},
    {"ssf", Policy::ssf},
    {"vpt", Policy::vpt},
    {"adaptformer", Policy::adaptformer},
    {"tadp_only", Policy::tadp_only},
    {"sfas_only", Policy::sfas_only},
    {"weatherpeft", Policy::weatherpeft},
}};

constexpr std::array<std::string_view, kSsfSites> kSsfNames{
    "norm1", "q", "k", "v", "proj", "norm2", "fc1", "fc2"};

std::string prefix(std::size_t block) { return "blocks." + std::to_string(block) + "."; }

void require_unattached(bool attached, const char* what) {
  if (attached) throw ContractError(std::string(what) + " is already attached");
}

void check_prompt_slot(const Model& model) {
  require_unattached(model.prompts.has_value(), "a prompt module");
}

}  // namespace

Policy parse_policy(std::string_view id) {
  for (const auto& [name, p] : kPolicies) {
    if (name == id) return p;
  }
  if (id == "full_tuning") return Policy::full;
  if (id == "bias") return Policy::bias_only;
  throw ConfigError("unknown method '" + std::string(id) + "'");
}

std::string_view to_string(Policy policy) {
  for (const auto& [name, p] : kPolicies) {
    if (p == policy) return name;
  }
  return "unknown";
}

bool uses_sfas(Policy p) { return p == Policy::sfas_only || p == Policy::weatherpeft; }
bool uses_tadp(Policy p) { return p == Policy::tadp_only || p == Policy::weatherpeft; }

PromptGate parse_prompt_gate(std::string_view id) {
  if (id == "zero_init") return PromptGate::zero_init;
  if (id == "none") return PromptGate::none;
  throw ConfigError("unknown prompt.gate '" + std::string(id) + "' (expected zero_init or none)");
}

std::string_view to_string(PromptGate gate) {
  return gate == PromptGate::none ? "none" : "zero_init";
}

void attach_lora(Model& model, std::size_t rank, double alpha, std::uint64_t seed) {
  require_unattached(model.lora.has_value(), "LoRA");
  if (rank == 0) throw ConfigError("lora.rank must be positive");
  const std::size_t d = model.config().dim;
  ParamStore& ps = model.params();
  LoraAttachment att;
  att.rank = rank;
  att.alpha = alpha;
  for (std::size_t i = 0; i < model.config().depth; ++i) {
    for (const char* proj : {"q", "v"}) {
      const std::string base = prefix(i) + "attn." + proj + ".lora_";
      LoraAttachment::Pair pair{};
      pair.a = ps.add(base + "A", normal_init({rank, d}, 0.02, seed, base + "A"), ParamGroup::peft);
      pair.b = ps.add(base + "B", Tensor::zeros({d, rank}), ParamGroup::peft);
      (proj[0] == 'q' ? att.q : att.v).push_back(pair);
    }
  }
  model.lora = std::move(att);
}

void merge_lora(Model& model) {
  if (!model.lora) throw ContractError("merge_lora: no LoRA attached");
  LoraAttachment& att = *model.lora;
  if (att.merged) throw ContractError("merge_lora: already merged");
  ParamStore& ps = model.params();
  const std::size_t d = model.config().dim, r = att.rank;
  const double s = att.scaling();
  att.saved_q.clear();
  att.saved_v.clear();
  for (std::size_t i = 0; i < model.config().depth; ++i) {
    for (int which = 0; which < 2; ++which) {
      const auto& pair = which == 0 ? att.q[i] : att.v[i];
      const std::size_t widx = which == 0 ? model.block(i).q_weight : model.block(i).v_weight;
      Tensor& w = ps.value(widx);
      (which == 0 ? att.saved_q : att.saved_v).push_back(w);
      const Tensor& a = ps.value(pair.a);
      const Tensor& b = ps.value(pair.b);
      for (std::size_t o = 0; o < d; ++o) {
        for (std::size_t in = 0; in < d; ++in) {
          double acc = 0.0;
          for (std::size_t k = 0; k < r; ++k) acc += b[o * r + k] * a[k * d + in];
          w[o * d + in] += s * acc;
        }
      }
    }
  }
  att.merged = true;
}

void unmerge_lora(Model& model) {
  if (!model.lora || !model.lora->merged) throw ContractError("unmerge_lora: LoRA is not merged");
  LoraAttachment& att = *model.lora;
  ParamStore& ps = model.params();
  for (std::size_t i = 0; i < model.config().depth; ++i) {
    ps.value(model.block(i).q_weight) = att.saved_q[i];
    ps.value(model.block(i).v_weight) = att.saved_v[i];
  }
  att.saved_q.clear();
  att.saved_v.clear();
  att.merged = false;
}

void attach_ssf(Model& model) {
  require_unattached(model.ssf.has_value(), "SSF");
  const ModelConfig& c = model.config();
  ParamStore& ps = model.params();
  SsfAttachment att;
  for (std::size_t i = 0; i < c.depth; ++i) {
    std::array<SsfAttachment::Point, kSsfSites> pts{};
    for (std::size_t s = 0; s < kSsfSites; ++s) {
      const std::size_t width = kSsfNames[s] == "fc1" ? c.mlp_ratio * c.dim : c.dim;
      const std::string base = prefix(i) + "ssf." + std::string(kSsfNames[s]);
      pts[s].scale = ps.add(base + ".scale", Tensor::ones({width}), ParamGroup::peft);
      pts[s].shift = ps.add(base + ".shift", Tensor::zeros({width}), ParamGroup::peft);
    }
    att.blocks.push_back(pts);
  }
  model.ssf = std::move(att);
}

void attach_adaptformer(Model& model, double ratio, double scale, std::uint64_t seed) {
  require_unattached(model.adaptformer.has_value(), "AdaptFormer");
  if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("adaptformer.ratio must be in (0, 1]");
  const std::size_t d = model.config().dim;
  const auto hidden = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratio * d)));
  ParamStore& ps = model.params();
  AdaptFormerAttachment att;
  att.hidden = hidden;
  att.scale = scale;
  for (std::size_t i = 0; i < model.config().depth; ++i) {
    const std::string base = prefix(i) + "adaptformer.";
    AdaptFormerAttachment::Block b{};
    b.down_weight = ps.add(base + "down.weight",
                           trunc_normal({hidden, d}, 0.02, seed, base + "down.weight"),
                           ParamGroup::peft);
    b.down_bias = ps.add(base + "down.bias", Tensor::zeros({hidden}), ParamGroup::peft);
    b.up_weight = ps.add(base + "up.weight", Tensor::zeros({d, hidden}), ParamGroup::peft);
    b.up_bias = ps.add(base + "up.bias", Tensor::zeros({d}), ParamGroup::peft);
    att.blocks.push_back(b);
  }
  model.adaptformer = std::move(att);
}

void attach_vpt(Model& model, std::size_t length, PromptGate gate, std::uint64_t seed) {
  check_prompt_slot(model);
  if (length == 0) throw ConfigError("vpt.length must be positive");
  const ModelConfig& c = model.config();
  ParamStore& ps = model.params();
  PromptAttachment att;
  att.length = length;
  att.gate = gate;
  att.vpt_prompts = ps.add("vpt.prompts",
                           trunc_normal({c.depth, length, c.dim}, 0.02, seed, "vpt.prompts"),
                           ParamGroup::peft);
  if (gate == PromptGate::zero_init) {
    att.gates = ps.add("vpt.gates", Tensor::zeros({c.depth, c.heads}), ParamGroup::peft);
  }
  model.prompts = std::move(att);
}

void attach_tadp(Model& model, TadpConfig config, PromptGate gate, std::uint64_t seed) {
  check_prompt_slot(model);
  const ModelConfig& c = model.config();
  config.dim = c.dim;
  config.vars = c.in_vars;
  config.patch_h = c.patch;
  config.patch_w = c.patch;
  PromptAttachment att;
  att.length = config.prompt_len;
  att.gate = gate;
  att.generator = PromptGenerator::create(model.params(), config, seed);
  if (gate == PromptGate::zero_init) {
    att.gates =
        model.params().add("tadp.gates", Tensor::zeros({c.depth, c.heads}), ParamGroup::peft);
  }
  model.prompts = std::move(att);
}

TrainableReport trainable_report(const ParamStore& store) {
  TrainableReport r;
  r.embedding = store.trainable_numel(ParamGroup::embedding);
  r.backbone = store.trainable_numel(ParamGroup::backbone);
  r.head = store.trainable_numel(ParamGroup::head);
  r.peft = store.trainable_numel(ParamGroup::peft);
  r.total = store.trainable_numel();
  return r;
}

TrainableReport apply_policy(Model& model, Policy policy, const PeftOptions& opt) {
  ParamStore& ps = model.params();
  switch (policy) {
    case Policy::lora: attach_lora(model, opt.lora_rank, opt.lora_alpha, opt.seed); break;
    case Policy::ssf: attach_ssf(model); break;
    case Policy::vpt: attach_vpt(model, opt.vpt_length, opt.prompt_gate, opt.seed); break;
    case Policy::adaptformer:
      attach_adaptformer(model, opt.adaptformer_ratio, opt.adaptformer_scale, opt.seed);
      break;
    case Policy::tadp_only:
    case Policy::weatherpeft: attach_tadp(model, opt.tadp, opt.prompt_gate, opt.seed); break;
    default: break;
  }

  ps.set_all_trainable(false);
  ps.set_group_trainable(ParamGroup::head, true);
  switch (policy) {
    case Policy::full: ps.set_all_trainable(true); break;
    case Policy::linear_probe: break;
    case Policy::bias_only:
      for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps.entry(i).name.ends_with(".bias")) ps.entry(i).trainable = true;
      }
      break;
    case Policy::sfas_only: ps.set_group_trainable(ParamGroup::backbone, true); break;
    case Policy::weatherpeft:
      ps.set_group_trainable(ParamGroup::backbone, true);
      ps.set_group_trainable(ParamGroup::peft, true);
      break;
    default: ps.set_group_trainable(ParamGroup::peft, true); break;
  }
  return trainable_report(ps);
}

}  // namespace wxpeft
