// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "wxpeft/param_store.hpp"
#include "wxpeft/serialize.hpp"

namespace wxpeft {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Decoupled-weight-decay Adam over the trainable entries of a ParamStore.
/// Moments are kept per entry, aligned with the store.
class AdamW {
 public:
  explicit AdamW(const ParamStore& store, AdamWConfig config = {});

  /// One update of every trainable entry that has a gradient. When `mask` is
  /// given, entries covered by `mask_layout` change only at coordinates whose
  /// mask byte is 1; elsewhere value, moments and decay are all left alone.
  /// Returns the number of scalar coordinates updated.
  std::size_t step(ParamStore& store, const GradList& grads, double lr,
                   const FlatLayout* mask_layout = nullptr,
                   const std::vector<std::uint8_t>* mask = nullptr);

  std::uint64_t steps() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return config_; }
  const Tensor& first_moment(std::size_t entry) const { return m_.at(entry); }
  const Tensor& second_moment(std::size_t entry) const { return v_.at(entry); }

  /// Moments as "<name>.opt.m" / "<name>.opt.v" plus "opt.step".
  std::vector<NamedTensor> state(const ParamStore& store) const;

 private:
  AdamWConfig config_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace wxpeft
