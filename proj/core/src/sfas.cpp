// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/sfas.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "wxpeft/error.hpp"
#include "wxpeft/rng.hpp"

namespace wxpeft {

FisherMode parse_fisher_mode(std::string_view id) {
  if (id == "per_sample") return FisherMode::per_sample;
  if (id == "batch_mean") return FisherMode::batch_mean;
  throw ConfigError("unknown sfas.mode '" + std::string(id) +
                    "' (expected per_sample or batch_mean)");
}

std::string_view to_string(FisherMode mode) {
  return mode == FisherMode::per_sample ? "per_sample" : "batch_mean";
}

std::vector<double> estimate_fisher(const std::vector<std::vector<double>>& grads,
                                    FisherMode mode) {
  return estimate_fisher(
      grads.size(), [&](std::size_t j) { return grads[j]; }, mode);
}

std::vector<double> estimate_fisher(
    std::size_t n, const std::function<std::vector<double>(std::size_t)>& grad_of_sample,
    FisherMode mode) {
  if (n == 0) throw ContractError("estimate_fisher: empty batch");
  std::vector<double> acc;
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> g = grad_of_sample(j);
    if (j == 0) {
      acc.assign(g.size(), 0.0);
    } else if (g.size() != acc.size()) {
      throw ContractError("estimate_fisher: gradient lengths differ between samples");
    }
    if (mode == FisherMode::per_sample) {
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * g[i];
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  if (mode == FisherMode::per_sample) {
    for (auto& v : acc) v *= inv;
  } else {
    for (auto& v : acc) {
      const double mean = v * inv;
      v = mean * mean;
    }
  }
  return acc;
}

double noise_scale(double gamma, std::size_t ns, std::size_t ts) {
  if (ts == 0) throw ContractError("sfas: total steps must be at least 1");
  if (ns > ts) {
    throw ContractError("sfas: step " + std::to_string(ns) + " exceeds total " +
                        std::to_string(ts));
  }
  if (gamma < 0.0) throw ContractError("sfas: gamma must be non-negative");
  return gamma * (1.0 - static_cast<double>(ns) / static_cast<double>(ts));
}

std::vector<double> perturb(const std::vector<double>& fisher, std::size_t ns, std::size_t ts,
                            double gamma, std::uint64_t seed) {
  const double factor = noise_scale(gamma, ns, ts);
  std::vector<double> out = fisher;
  if (factor == 0.0) return out;
  CounterRng rng(seed, "sfas", ns);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * rng.uniform(i) + fisher[i];
  return out;
}

std::size_t topk_count(double k, std::size_t n) {
  if (!(k > 0.0) || k > 1.0) throw ConfigError("sfas.k must be in (0, 1]");
  if (n == 0) return 0;
  // Shave a relative 1e-12 so products like 0.1 * 30 land on 3, not 4.
  const double x = k * static_cast<double>(n) * (1.0 - 1e-12);
  auto m = static_cast<std::size_t>(std::ceil(x));
  return std::clamp<std::size_t>(m, 1, n);
}

std::vector<std::uint8_t> select_top(const std::vector<double>& scores, std::size_t m) {
  const std::size_t n = scores.size();
  std::vector<std::uint8_t> mask(n, 0);
  if (m == 0) return mask;
  if (m >= n) {
    std::fill(mask.begin(), mask.end(), 1);
    return mask;
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m - 1), idx.end(),
                   before);
  for (std::size_t i = 0; i < m; ++i) mask[idx[i]] = 1;
  return mask;
}

std::vector<std::uint8_t> select_topk(const std::vector<double>& scores, double k) {
  return select_top(scores, topk_count(k, scores.size()));
}

std::size_t masked_step(ParamStore& store, const GradList& grads, const FlatLayout& domain,
                        const std::vector<std::uint8_t>& mask, AdamW& opt, double lr) {
  if (mask.size() != domain.total) {
    throw ContractError("masked_step: mask length " + std::to_string(mask.size()) +
                        " does not match " + std::to_string(domain.total) + " parameters");
  }
  return opt.step(store, grads, lr, &domain, &mask);
}

FlatLayout sfas_domain(const ParamStore& store, bool exclude_norm_bias) {
  return store.layout([&](const ParamEntry& e) {
    return e.group == ParamGroup::backbone && e.trainable &&
           !(exclude_norm_bias && is_bias_or_norm(e.name));
  });
}

FisherState::FisherState(const ParamStore& store, const SfasConfig& config,
                         std::size_t total_steps)
    : config_(config), domain_(sfas_domain(store, config.exclude_norm_bias)), ts_(total_steps) {
  if (ts_ == 0) throw ConfigError("sfas needs at least one training step");
  if (domain_.total == 0) throw ConfigError("sfas: no trainable backbone parameters to select");
  topk_count(config_.k, domain_.total);
  if (config_.gamma < 0.0) throw ConfigError("sfas.gamma must be non-negative");
  ever_.assign(domain_.total, 0);
}

MaskStats FisherState::select(const std::vector<GradList>& sample_grads) {
  if (ns_ >= ts_) throw ContractError("sfas: no steps left in the schedule");
  fhat_ = estimate_fisher(
      sample_grads.size(), [&](std::size_t j) { return flatten_grads(sample_grads[j], domain_); },
      config_.mode);
  fbar_ = perturb(fhat_, ns_, ts_, config_.gamma, config_.seed);
  auto next = select_top(fbar_, mask_size());

  MaskStats st;
  st.step = ns_;
  st.noise_scale = noise_scale(config_.gamma, ns_, ts_);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < next.size(); ++i) {
    st.selected += next[i];
    if (has_mask_) {
      inter += next[i] & mask_[i];
      uni += next[i] | mask_[i];
    }
    ever_[i] |= next[i];
  }
  if (has_mask_) {
    st.overlap_with_prev = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
  }
  st.max_fisher = *std::max_element(fhat_.begin(), fhat_.end());
  std::vector<double> tmp = fhat_;
  const std::size_t mid = tmp.size() / 2;
  std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(mid), tmp.end());
  st.median_fisher = tmp[mid];
  if (tmp.size() % 2 == 0) {
    const double lower = *std::max_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(mid));
    st.median_fisher = 0.5 * (lower + tmp[mid]);
  }
  mask_ = std::move(next);
  has_mask_ = true;
  return st;
}

void FisherState::advance() {
  if (ns_ >= ts_) throw ContractError("sfas: step counter already at total steps");
  ++ns_;
}

bool FisherState::freeze_audit(const ParamStore& initial, const ParamStore& now) const {
  for (const auto& s : domain_.slices) {
    const Tensor& a = initial.value(s.entry);
    const Tensor& b = now.value(s.entry);
    if (a.numel() != s.numel || b.numel() != s.numel) return false;
    for (std::size_t j = 0; j < s.numel; ++j) {
      if (ever_[s.offset + j]) continue;
      if (std::memcmp(&a.data()[j], &b.data()[j], sizeof(double)) != 0) return false;
    }
  }
  return true;
}

std::vector<KlRow> kl_quadratic_check(const std::function<std::vector<double>(double)>& outputs,
                                      std::size_t n_samples,
                                      const std::vector<double>& eps_ladder) {
  if (n_samples == 0) throw ContractError("kl_quadratic_check: no samples");
  const std::vector<double> base = outputs(0.0);
  std::vector<KlRow> rows;
  for (double eps : eps_ladder) {
    if (eps == 0.0) throw ContractError("kl_quadratic_check: eps must be nonzero");
    const std::vector<double> moved = outputs(eps);
    if (moved.size() != base.size()) throw ContractError("kl_quadratic_check: output size changed");
    double kl = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double d = moved[i] - base[i];
      kl += 0.5 * d * d;
    }
    kl /= static_cast<double>(n_samples);
    rows.push_back({eps, kl, kl / (eps * eps)});
  }
  return rows;
}

std::vector<KlRow> kl_quadratic_check(const Model& model, const std::vector<Tensor>& inputs,
                                      std::size_t entry, std::size_t offset,
                                      const std::vector<double>& eps_ladder) {
  if (offset >= model.params().value(entry).numel()) {
    throw ContractError("kl_quadratic_check: coordinate out of range");
  }
  auto outputs = [&](double eps) {
    Model moved = model;
    moved.params().value(entry)[offset] += eps;
    std::vector<double> all;
    for (const Tensor& x : inputs) {
      Tensor y = moved.predict(x);
      all.insert(all.end(), y.data().begin(), y.data().end());
    }
    return all;
  };
  return kl_quadratic_check(outputs, inputs.size(), eps_ladder);
}

}  // namespace wxpeft
