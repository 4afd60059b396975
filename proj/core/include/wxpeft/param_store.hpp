// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wxpeft/autodiff.hpp"
#include "wxpeft/serialize.hpp"
#include "wxpeft/tensor.hpp"

namespace wxpeft {

enum class ParamGroup { embedding, backbone, head, peft };

std::string_view to_string(ParamGroup group);

struct ParamEntry {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::backbone;
  bool trainable = true;
};

/// One tensor's span inside a flat vector.
struct FlatSlice {
  std::size_t entry;
  std::size_t offset;
  std::size_t numel;
};

/// Concatenation of a subset of store entries in store order.
struct FlatLayout {
  std::vector<FlatSlice> slices;
  std::size_t total = 0;

  /// Slice for a store entry, or nullptr when the entry is not in the layout.
  const FlatSlice* find(std::size_t entry) const;
};

/// Ordered, uniquely named parameter tensors. Insertion order is the
/// flattening order.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value, ParamGroup group, bool trainable = true);

  std::size_t size() const noexcept { return entries_.size(); }
  ParamEntry& entry(std::size_t i) { return entries_.at(i); }
  const ParamEntry& entry(std::size_t i) const { return entries_.at(i); }
  Tensor& value(std::size_t i) { return entries_.at(i).value; }
  const Tensor& value(std::size_t i) const { return entries_.at(i).value; }

  std::optional<std::size_t> find(std::string_view name) const;
  /// Like find() but throws ContractError for unknown names.
  std::size_t index(std::string_view name) const;

  std::vector<std::string> names() const;
  std::size_t numel() const;
  std::size_t numel(ParamGroup group) const;
  std::size_t trainable_numel() const;
  std::size_t trainable_numel(ParamGroup group) const;

  void set_all_trainable(bool trainable);
  void set_group_trainable(ParamGroup group, bool trainable);

  FlatLayout layout(const std::function<bool(const ParamEntry&)>& include) const;
  std::vector<double> flatten(const FlatLayout& layout) const;

  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }

 private:
  std::vector<ParamEntry> entries_;
};

bool is_bias_or_norm(std::string_view name);

/// Truncated-normal (+-2 std) tensor drawn from the stream named `name`, so a
/// parameter's initial value depends only on (seed, name).
Tensor trunc_normal(Shape shape, double std, std::uint64_t seed, std::string_view name);
/// Normal(0, std) tensor drawn from the stream named `name`.
Tensor normal_init(Shape shape, double std, std::uint64_t seed, std::string_view name);

/// Per-entry gradient buffers aligned with a ParamStore; absent entries did
/// not receive a gradient.
using GradList = std::vector<std::optional<Tensor>>;

/// Copies gradients for the layout's entries into a flat vector. Entries
/// without a gradient contribute zeros.
std::vector<double> flatten_grads(const GradList& grads, const FlatLayout& layout);

/// Binds store entries into a Graph on first use: trainable entries become
/// borrowed parameters, frozen ones borrowed constants.
class Binder {
 public:
  Binder(ad::Graph& graph, const ParamStore& store);

  ad::Var operator()(std::size_t index);
  ad::Graph& graph() noexcept { return graph_; }
  const ParamStore& store() const noexcept { return store_; }

  /// Gradients for every bound trainable entry.
  GradList gradients(const ad::Gradients& g) const;

 private:
  ad::Graph& graph_;
  const ParamStore& store_;
  std::vector<std::optional<ad::Var>> bound_;
};

/// Adds `src` into `dst` entry by entry; missing entries in dst are created.
void accumulate(GradList& dst, const GradList& src);
void scale_grads(GradList& grads, double factor);

}  // namespace wxpeft
