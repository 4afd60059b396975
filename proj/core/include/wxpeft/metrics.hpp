// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "wxpeft/tensor.hpp"

// Verification scores. Fields are [N x H x W] (or a single [H x W] field);
// latitude weights have length H and unit mean.
namespace wxpeft {

/// Linear-interpolation quantile, q in [0, 1].
double quantile_linear(std::vector<double> values, double q);

/// Mean over samples of the per-sample latitude-weighted RMSE.
double rmse_latweighted(const Tensor& pred, const Tensor& truth, const Tensor& weights);
/// Unweighted mean of pred - truth.
double mean_bias(const Tensor& pred, const Tensor& truth);
/// Latitude-weighted anomaly correlation pooled over all samples and points.
/// `climatology` is [H x W] or the shape of pred.
double acc(const Tensor& pred, const Tensor& truth, const Tensor& climatology,
           const Tensor& weights);

double crps_gaussian(double mu, double sigma, double x);
Tensor crps_gaussian_field(const Tensor& mu, const Tensor& sigma, const Tensor& obs);
/// Integral of (F(t) - 1{t >= x})^2 over [min(lo, x), max(hi, x)] by adaptive
/// Gauss-Kronrod, split at x and at `breakpoints`.
double crps_numeric(const std::function<double(double)>& cdf, double x, double lo, double hi,
                    std::span<const double> breakpoints = {}, double abs_tol = 1e-8);
/// crps_numeric for N(mu, sigma^2) over mu +- 12 sigma.
double crps_numeric_gaussian(double mu, double sigma, double x);

/// Mean of |efi| * crps.
double eecrps(const Tensor& crps, const Tensor& efi);

/// Rows: forecast category (dry, light, heavy); columns: observed category.
using SeepsMatrix = std::array<std::array<double, 3>, 3>;
SeepsMatrix seeps_matrix(double p);

struct SeepsClimatology {
  Tensor dry_prob;     // [H x W]
  Tensor light_heavy;  // [H x W], 2/3 quantile of non-dry values
  double dry_threshold = 0.1;
};

SeepsClimatology seeps_climatology(const Tensor& obs, double dry_threshold = 0.1);
/// 0 dry, 1 light, 2 heavy.
int seeps_category(double value, double dry_threshold, double light_heavy);
double seeps(const Tensor& pred, const Tensor& obs, const SeepsClimatology& clim,
             const Tensor& weights);

/// Hits / (hits + misses + false alarms), events strictly above threshold.
double threat_score(const Tensor& pred, const Tensor& obs, const Tensor& thresholds);

/// Per-point temporal mean and quantile of [N x H x W] fields.
Tensor mean_field(const Tensor& fields);
Tensor quantile_field(const Tensor& fields, double q);

}  // namespace wxpeft
