// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/optim.hpp"

#include <cmath>

#include "wxpeft/error.hpp"

namespace wxpeft {

AdamW::AdamW(const ParamStore& store, AdamWConfig config) : config_(config) {
  m_.reserve(store.size());
  v_.reserve(store.size());
  for (const auto& e : store.entries()) {
    m_.push_back(Tensor::zeros_like(e.value));
    v_.push_back(Tensor::zeros_like(e.value));
  }
}

std::size_t AdamW::step(ParamStore& store, const GradList& grads, double lr,
                        const FlatLayout* mask_layout, const std::vector<std::uint8_t>* mask) {
  if (store.size() != m_.size()) throw ContractError("optimizer built for a different store");
  if (grads.size() > store.size()) throw ContractError("more gradients than parameters");
  if ((mask_layout == nullptr) != (mask == nullptr)) {
    throw ContractError("mask and mask layout must be given together");
  }
  if (mask && mask->size() != mask_layout->total) {
    throw ContractError("mask length " + std::to_string(mask->size()) +
                        " does not match layout length " + std::to_string(mask_layout->total));
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double decay = 1.0 - lr * config_.weight_decay;
  std::size_t updated = 0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    ParamEntry& e = store.entry(i);
    if (!e.trainable || !grads[i]) continue;
    const Tensor& g = *grads[i];
    if (g.numel() != e.value.numel()) {
      throw ContractError("gradient for '" + e.name + "' has the wrong size");
    }
    const FlatSlice* slice = mask_layout ? mask_layout->find(i) : nullptr;
    const std::uint8_t* bits = slice ? mask->data() + slice->offset : nullptr;
    auto p = e.value.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (bits && !bits[j]) continue;
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] = p[j] * decay - lr * mhat / (std::sqrt(vhat) + config_.eps);
      ++updated;
    }
  }
  return updated;
}

std::vector<NamedTensor> AdamW::state(const ParamStore& store) const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const ParamEntry& e = store.entry(i);
    if (!e.trainable) continue;
    out.push_back({e.name + ".opt.m", m_[i]});
    out.push_back({e.name + ".opt.v", v_[i]});
  }
  out.push_back({"opt.step", Tensor::scalar(static_cast<double>(t_))});
  return out;
}

}  // namespace wxpeft
