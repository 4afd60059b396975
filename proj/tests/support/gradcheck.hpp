// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "wxpeft/autodiff.hpp"
#include "wxpeft/rng.hpp"
#include "wxpeft/tensor.hpp"

namespace wxpeft::testing {

using ScalarFn = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

struct GradCheckResult {
  double worst_relative = 0.0;  // max over inputs of ||analytic - numeric|| / scale
  std::size_t worst_input = 0;
};

/// Compares reverse-mode gradients of a scalar function with central
/// differences, input by input, using a norm-wise relative error.
inline GradCheckResult gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                 double h = 1e-6) {
  std::vector<Tensor> analytic;
  {
    ad::Graph g;
    std::vector<ad::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.param(t));
    ad::Var loss = f(g, vars);
    const ad::Gradients grads = g.backward(loss);
    for (const ad::Var& v : vars) {
      const Tensor* gt = grads.find(v);
      analytic.push_back(gt ? *gt : Tensor::zeros_like(v.value()));
    }
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    ad::Graph g(false);
    std::vector<ad::Var> vars;
    for (const Tensor& t : xs) vars.push_back(g.constant(t));
    return f(g, vars).value().item();
  };
  GradCheckResult out;
  std::vector<Tensor> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < xs[k].numel(); ++i) {
      const double x0 = xs[k][i];
      const double step = h * std::max(1.0, std::abs(x0));
      xs[k][i] = x0 + step;
      const double up = eval(xs);
      xs[k][i] = x0 - step;
      const double down = eval(xs);
      xs[k][i] = x0;
      const double num = (up - down) / (2.0 * step);
      const double an = analytic[k][i];
      diff2 += (an - num) * (an - num);
      a2 += an * an;
      n2 += num * num;
    }
    const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-7});
    const double rel = std::sqrt(diff2) / scale;
    if (rel > out.worst_relative) {
      out.worst_relative = rel;
      out.worst_input = k;
    }
  }
  return out;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, std::string_view stream,
                            double scale = 1.0, double offset = 0.0) {
  Tensor t(std::move(shape));
  RngStream rng(seed, stream);
  for (double& v : t.data()) v = offset + scale * rng.normal();
  return t;
}

}  // namespace wxpeft::testing
