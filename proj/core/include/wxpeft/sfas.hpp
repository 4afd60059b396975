// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "wxpeft/backbone.hpp"
#include "wxpeft/optim.hpp"
#include "wxpeft/param_store.hpp"

namespace wxpeft {

enum class FisherMode { per_sample, batch_mean };

FisherMode parse_fisher_mode(std::string_view id);
std::string_view to_string(FisherMode mode);

/// Diagonal Fisher from per-sample score gradients (one vector per sample).
/// per_sample: mean of squares. batch_mean: square of the mean.
std::vector<double> estimate_fisher(const std::vector<std::vector<double>>& sample_grads,
                                    FisherMode mode);
/// Same, pulling sample j's gradient from `grad_of_sample(j)` for j < n.
std::vector<double> estimate_fisher(std::size_t n,
                                    const std::function<std::vector<double>(std::size_t)>& grad_of_sample,
                                    FisherMode mode);

/// gamma * (1 - ns/ts).
double noise_scale(double gamma, std::size_t ns, std::size_t ts);

/// F + gamma(1 - ns/ts) * U with U ~ Uniform[0,1) drawn from the stream
/// keyed (seed, "sfas", ns).
std::vector<double> perturb(const std::vector<double>& fisher, std::size_t ns, std::size_t ts,
                            double gamma, std::uint64_t seed);

/// ceil(k * n), clamped to [1, n].
std::size_t topk_count(double k, std::size_t n);
/// Ones at the m largest scores; equal scores go to the lower index.
std::vector<std::uint8_t> select_top(const std::vector<double>& scores, std::size_t m);
std::vector<std::uint8_t> select_topk(const std::vector<double>& scores, double k);

/// Masked AdamW step over `domain`; entries outside it update normally.
std::size_t masked_step(ParamStore& store, const GradList& grads, const FlatLayout& domain,
                        const std::vector<std::uint8_t>& mask, AdamW& opt, double lr);

/// Backbone-group coordinates eligible for selection.
FlatLayout sfas_domain(const ParamStore& store, bool exclude_norm_bias = false);

struct SfasConfig {
  double k = 0.001;
  double gamma = 0.2;
  FisherMode mode = FisherMode::per_sample;
  bool exclude_norm_bias = false;
  std::uint64_t seed = 0;
};

struct MaskStats {
  std::size_t step = 0;
  std::size_t selected = 0;
  std::optional<double> overlap_with_prev;  // Jaccard; absent on the first step
  double noise_scale = 0.0;
  double max_fisher = 0.0;
  double median_fisher = 0.0;
};

/// Fisher estimate, perturbed scores, current mask and annealing counters
/// for one training run.
class FisherState {
 public:
  FisherState(const ParamStore& store, const SfasConfig& config, std::size_t total_steps);

  const FlatLayout& domain() const noexcept { return domain_; }
  const SfasConfig& config() const noexcept { return config_; }
  std::size_t step() const noexcept { return ns_; }
  std::size_t total_steps() const noexcept { return ts_; }
  std::size_t mask_size() const { return topk_count(config_.k, domain_.total); }

  /// Runs estimate -> perturb -> select on this batch's per-sample gradients.
  MaskStats select(const std::vector<GradList>& sample_grads);
  /// Moves to the next step; ns may not pass ts.
  void advance();

  const std::vector<double>& fisher() const noexcept { return fhat_; }
  const std::vector<double>& scores() const noexcept { return fbar_; }
  const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }
  /// Coordinates selected by at least one step so far.
  const std::vector<std::uint8_t>& ever_selected() const noexcept { return ever_; }

  /// True when every never-selected domain coordinate of `now` equals
  /// `initial` bit for bit.
  bool freeze_audit(const ParamStore& initial, const ParamStore& now) const;

 private:
  SfasConfig config_;
  FlatLayout domain_;
  std::size_t ns_ = 0, ts_ = 0;
  std::vector<double> fhat_, fbar_;
  std::vector<std::uint8_t> mask_, ever_;
  bool has_mask_ = false;
};

struct KlRow {
  double eps;
  double kl;
  double ratio;  // kl / eps^2
};

/// E_X[KL(P_theta || P_theta+eps e_i)] / eps^2 for a unit-variance Gaussian
/// likelihood whose means are `outputs(eps)` over `n_samples` samples.
std::vector<KlRow> kl_quadratic_check(const std::function<std::vector<double>(double)>& outputs,
                                      std::size_t n_samples, const std::vector<double>& eps_ladder);

/// Model form: perturbs coordinate `offset` of parameter `entry` and uses
/// the model outputs on `inputs` as Gaussian means.
std::vector<KlRow> kl_quadratic_check(const Model& model, const std::vector<Tensor>& inputs,
                                      std::size_t entry, std::size_t offset,
                                      const std::vector<double>& eps_ladder);

}  // namespace wxpeft
