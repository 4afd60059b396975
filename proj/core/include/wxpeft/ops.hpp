// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "wxpeft/autodiff.hpp"
#include "wxpeft/tensor.hpp"

namespace wxpeft {

inline constexpr double kLayerNormEps = 1e-5;

double normal_pdf(double z) noexcept;
double normal_cdf(double z) noexcept;

// Plain-tensor kernels shared by the recorded ops and by data generation.
Tensor avg_pool_2d(const Tensor& x, std::size_t fh, std::size_t fw);
Tensor bilinear_upsample_2d(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor transpose_2d(const Tensor& x);

}  // namespace wxpeft

/// Differentiable operations. Each evaluates eagerly and, when the owning
/// Graph is recording and an operand participates, records its backward
/// rule. Shape violations raise DimensionError naming the shapes involved.
namespace wxpeft::ad {

// Elementwise, equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
/// x * s where s has one element.
Var scale_by(Var x, Var s);
Var square(Var x);
Var exp(Var x);
Var abs(Var x);
Var gelu(Var x);

// Broadcast a vector along the last dimension of x.
Var add_rowvec(Var x, Var v);
Var mul_rowvec(Var x, Var v);

// Reductions to shape {1}.
Var sum(Var x);
Var mean(Var x);

// Products. a: m x k.
Var matmul(Var a, Var b);     ///< b: k x n
Var matmul_nt(Var a, Var b);  ///< a * b^T, b: n x k
/// x[..., in] * w^T (+ b), with w: out x in. Leading dims of x are flattened.
Var linear(Var x, Var w);
Var linear(Var x, Var w, Var b);

Var softmax_lastdim(Var x);
Var layernorm_lastdim(Var x, Var gamma, Var beta, double eps = kLayerNormEps);

/// Moves the last axis to the front: (d1..dn) -> (dn, d1..dn-1).
Var pi_shift(Var x);
Var reshape(Var x, Shape shape);
Var concat_first(Var a, Var b);
Var slice_first(Var x, std::size_t begin, std::size_t count);
Var slice_lastdim(Var x, std::size_t begin, std::size_t count);
Var concat_lastdim(std::span<const Var> parts);

// Gridded fields, x: C x H x W.
Var avg_pool_2d(Var x, std::size_t fh, std::size_t fw);
Var bilinear_upsample_2d(Var x, std::size_t out_h, std::size_t out_w);
/// C x H x W -> M x (C*ph*pw), tokens in row-major patch order.
Var patchify(Var x, std::size_t ph, std::size_t pw);
/// Inverse of patchify.
Var unpatchify(Var tokens, std::size_t channels, std::size_t height, std::size_t width,
               std::size_t ph, std::size_t pw);

// Losses (mean over elements).
Var mse(Var pred, const Tensor& target);
Var mae(Var pred, const Tensor& target);
/// Mean closed-form Gaussian CRPS of N(mu, sigma^2) against obs.
Var crps_gaussian_mean(Var mu, Var sigma, const Tensor& obs);

}  // namespace wxpeft::ad
