// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <unordered_map>
#include <vector>

#include "wxpeft/tensor.hpp"

namespace wxpeft::ad {

using NodeId = std::uint32_t;
class Graph;

/// Handle to a value recorded in a Graph. Cheap to copy; only valid while
/// its Graph is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  Graph& graph() const { return *graph_; }
  NodeId id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Graph;
  Var(Graph* g, NodeId id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

/// Gradients of a scalar loss with respect to the participating leaves of
/// one Graph. Leaves that did not influence the loss are absent.
class Gradients {
 public:
  const Tensor* find(Var v) const;
  const Tensor& at(Var v) const;
  bool contains(Var v) const { return find(v) != nullptr; }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Graph;
  std::unordered_map<NodeId, Tensor> grads_;
};

/// A gradient session: records operations on Vars and runs reverse-mode
/// accumulation. Sessions are explicit objects confined to one thread; two
/// sessions never share state, so back-to-back per-sample passes are
/// independent.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  /// With record=false ops still evaluate but no backward rules are kept.
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor value);
  /// Borrows `value`; it must outlive the graph and stay unmodified.
  Var constant_ref(const Tensor& value);
  Var param(Tensor value);
  /// Borrowing variant of param().
  Var param_ref(const Tensor& value);

  /// Reverse pass from a one-element loss. Calling it again recomputes from
  /// scratch; nothing accumulates across calls.
  Gradients backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Interface for op implementations.
  Var record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  /// Accumulation buffer for v during backward(), or nullptr when v does not
  /// participate in the gradient.
  Tensor* grad_sink(Var v);
  const Tensor& value_of(NodeId id) const;

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    bool needs_grad = false;
    bool leaf = false;
    BackwardFn backward;
  };
  Var push(Node node);

  std::deque<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
  bool record_;
};

}  // namespace wxpeft::ad
