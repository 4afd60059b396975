// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/param_store.hpp"

#include <algorithm>

#include "wxpeft/error.hpp"
#include "wxpeft/rng.hpp"

namespace wxpeft {

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::embedding: return "embedding";
    case ParamGroup::backbone: return "backbone";
    case ParamGroup::head: return "head";
    case ParamGroup::peft: return "peft";
  }
  return "unknown";
}

const FlatSlice* FlatLayout::find(std::size_t entry) const {
  auto it = std::lower_bound(slices.begin(), slices.end(), entry,
                             [](const FlatSlice& s, std::size_t e) { return s.entry < e; });
  if (it == slices.end() || it->entry != entry) return nullptr;
  return &*it;
}

std::size_t ParamStore::add(std::string name, Tensor value, ParamGroup group, bool trainable) {
  if (name.empty()) throw ContractError("parameter name must not be empty");
  if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(value), group, trainable});
  return entries_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParamStore::index(std::string_view name) const {
  auto i = find(name);
  if (!i) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return *i;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

std::size_t ParamStore::numel(ParamGroup group) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.group == group) n += e.value.numel();
  }
  return n;
}

std::size_t ParamStore::trainable_numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.value.numel();
  }
  return n;
}

std::size_t ParamStore::trainable_numel(ParamGroup group) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable && e.group == group) n += e.value.numel();
  }
  return n;
}

void ParamStore::set_all_trainable(bool trainable) {
  for (auto& e : entries_) e.trainable = trainable;
}

void ParamStore::set_group_trainable(ParamGroup group, bool trainable) {
  for (auto& e : entries_) {
    if (e.group == group) e.trainable = trainable;
  }
}

FlatLayout ParamStore::layout(const std::function<bool(const ParamEntry&)>& include) const {
  FlatLayout out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!include(entries_[i])) continue;
    out.slices.push_back({i, out.total, entries_[i].value.numel()});
    out.total += entries_[i].value.numel();
  }
  return out;
}

std::vector<double> ParamStore::flatten(const FlatLayout& layout) const {
  std::vector<double> flat(layout.total);
  for (const auto& s : layout.slices) {
    auto src = entries_.at(s.entry).value.data();
    std::copy(src.begin(), src.end(), flat.begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  return flat;
}

bool is_bias_or_norm(std::string_view name) {
  return name.ends_with(".bias") || name.find("norm") != std::string_view::npos;
}

Tensor trunc_normal(Shape shape, double std, std::uint64_t seed, std::string_view name) {
  Tensor t(std::move(shape));
  RngStream rng(seed, name);
  for (auto& v : t.data()) v = rng.truncated_normal(std);
  return t;
}

Tensor normal_init(Shape shape, double std, std::uint64_t seed, std::string_view name) {
  Tensor t(std::move(shape));
  RngStream rng(seed, name);
  for (auto& v : t.data()) v = std * rng.normal();
  return t;
}

std::vector<double> flatten_grads(const GradList& grads, const FlatLayout& layout) {
  std::vector<double> flat(layout.total, 0.0);
  for (const auto& s : layout.slices) {
    if (s.entry >= grads.size() || !grads[s.entry]) continue;
    auto src = grads[s.entry]->data();
    if (src.size() != s.numel) throw ContractError("gradient size does not match layout");
    std::copy(src.begin(), src.end(), flat.begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  return flat;
}

Binder::Binder(ad::Graph& graph, const ParamStore& store)
    : graph_(graph), store_(store), bound_(store.size()) {}

ad::Var Binder::operator()(std::size_t index) {
  auto& slot = bound_.at(index);
  if (!slot) {
    const ParamEntry& e = store_.entry(index);
    slot = e.trainable ? graph_.param_ref(e.value) : graph_.constant_ref(e.value);
  }
  return *slot;
}

GradList Binder::gradients(const ad::Gradients& g) const {
  GradList out(store_.size());
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (!bound_[i]) continue;
    if (const Tensor* t = g.find(*bound_[i])) out[i] = *t;
  }
  return out;
}

void accumulate(GradList& dst, const GradList& src) {
  if (dst.size() < src.size()) dst.resize(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!src[i]) continue;
    if (!dst[i]) {
      dst[i] = *src[i];
      continue;
    }
    auto d = dst[i]->data();
    auto s = src[i]->data();
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += s[j];
  }
}

void scale_grads(GradList& grads, double factor) {
  for (auto& g : grads) {
    if (!g) continue;
    for (auto& v : g->data()) v *= factor;
  }
}

}  // namespace wxpeft
