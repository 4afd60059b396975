// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/autodiff.hpp"

#include "wxpeft/error.hpp"

namespace wxpeft::ad {

const Tensor& Var::value() const {
  if (!graph_) throw ContractError("use of an unbound Var");
  return graph_->value_of(id_);
}

bool Var::requires_grad() const { return graph_ && graph_->needs_grad(*this); }

const Tensor* Gradients::find(Var v) const {
  auto it = grads_.find(v.id());
  return it == grads_.end() ? nullptr : &it->second;
}

const Tensor& Gradients::at(Var v) const {
  const Tensor* t = find(v);
  if (!t) throw ContractError("no gradient recorded for node " + std::to_string(v.id()));
  return *t;
}

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

const Tensor& Graph::value_of(NodeId id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.owned;
}

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Graph::constant_ref(const Tensor& value) {
  Node n;
  n.ref = &value;
  return push(std::move(n));
}

Var Graph::param(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = record_;
  n.leaf = true;
  return push(std::move(n));
}

Var Graph::param_ref(const Tensor& value) {
  Node n;
  n.ref = &value;
  n.needs_grad = record_;
  n.leaf = true;
  return push(std::move(n));
}

Var Graph::record(const char* op, Tensor value, std::initializer_list<Var> parents,
                  BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Node n;
  n.owned = std::move(value);
  if (record_) {
    for (const Var& p : parents) {
      if (p.graph_ != this) throw ContractError(std::string(op) + ": operands from another graph");
      if (nodes_[p.id_].needs_grad) n.needs_grad = true;
    }
    if (n.needs_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Tensor* Graph::grad_sink(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.needs_grad || v.id() >= grads_.size()) return nullptr;
  auto& slot = grads_[v.id()];
  if (!slot) slot.emplace(value_of(v.id()).shape(), 0.0);
  return &*slot;
}

Gradients Graph::backward(Var loss) {
  if (loss.graph_ != this) throw ContractError("backward: loss belongs to another graph");
  const Tensor& lv = value_of(loss.id());
  if (lv.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(lv.shape()));
  }
  Gradients out;
  if (!nodes_[loss.id()].needs_grad) return out;

  grads_.assign(nodes_.size(), std::nullopt);
  grads_[loss.id()].emplace(lv.shape(), 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!grads_[i]) continue;
    if (n.leaf) {
      out.grads_.emplace(static_cast<NodeId>(i), std::move(*grads_[i]));
    } else if (n.backward) {
      n.backward(*this, *grads_[i]);
    }
    grads_[i].reset();
  }
  grads_.clear();
  return out;
}

}  // namespace wxpeft::ad
