// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "wxpeft/error.hpp"
#include "wxpeft/ops.hpp"

namespace wxpeft {

namespace {

struct FieldDims {
  std::size_t n, h, w;
};

FieldDims field_dims(const Tensor& t, const char* what) {
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  throw DimensionError(std::string(what) + ": expected [N x H x W] or [H x W], got " +
                       shape_string(t.shape()));
}

FieldDims paired(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
  return field_dims(a, what);
}

void check_weights(const Tensor& weights, std::size_t h, const char* what) {
  if (weights.numel() != h) {
    throw DimensionError(std::string(what) + ": " + std::to_string(weights.numel()) +
                         " latitude weights for " + std::to_string(h) + " rows");
  }
}

void check_plane(const Tensor& t, const FieldDims& d, const char* what) {
  if (t.rank() != 2 || t.dim(0) != d.h || t.dim(1) != d.w) {
    throw DimensionError(std::string(what) + ": expected an [H x W] field of " +
                         std::to_string(d.h) + "x" + std::to_string(d.w) + ", got " +
                         shape_string(t.shape()));
  }
}

}  // namespace

double quantile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("quantile of an empty set");
  if (q < 0.0 || q > 1.0) throw DomainError("quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double rmse_latweighted(const Tensor& pred, const Tensor& truth, const Tensor& weights) {
  const FieldDims d = paired(pred, truth, "rmse");
  check_weights(weights, d.h, "rmse");
  const double inv_hw = 1.0 / static_cast<double>(d.h * d.w);
  double total = 0.0;
  for (std::size_t k = 0; k < d.n; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.h; ++i) {
      for (std::size_t j = 0; j < d.w; ++j) {
        const std::size_t at = (k * d.h + i) * d.w + j;
        const double e = pred[at] - truth[at];
        s += weights[i] * e * e;
      }
    }
    total += std::sqrt(s * inv_hw);
  }
  return total / static_cast<double>(d.n);
}

double mean_bias(const Tensor& pred, const Tensor& truth) {
  paired(pred, truth, "mean_bias");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) s += pred[i] - truth[i];
  return s / static_cast<double>(pred.numel());
}

double acc(const Tensor& pred, const Tensor& truth, const Tensor& climatology,
           const Tensor& weights) {
  const FieldDims d = paired(pred, truth, "acc");
  check_weights(weights, d.h, "acc");
  const bool full = climatology.shape() == pred.shape();
  if (!full) check_plane(climatology, d, "acc climatology");
  double num = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t k = 0; k < d.n; ++k) {
    for (std::size_t i = 0; i < d.h; ++i) {
      for (std::size_t j = 0; j < d.w; ++j) {
        const std::size_t at = (k * d.h + i) * d.w + j;
        const double c = climatology[full ? at : i * d.w + j];
        const double a = pred[at] - c;
        const double b = truth[at] - c;
        num += weights[i] * a * b;
        pp += weights[i] * a * a;
        tt += weights[i] * b * b;
      }
    }
  }
  if (pp == 0.0 || tt == 0.0) throw UndefinedValueError("acc: anomalies have zero variance");
  return num / std::sqrt(pp * tt);
}

double crps_gaussian(double mu, double sigma, double x) {
  if (!(sigma > 0.0)) throw DomainError("crps_gaussian: sigma must be positive");
  const double z = (x - mu) / sigma;
  return sigma *
         (2.0 * normal_pdf(z) + z * (2.0 * normal_cdf(z) - 1.0) - 1.0 / std::sqrt(std::numbers::pi));
}

Tensor crps_gaussian_field(const Tensor& mu, const Tensor& sigma, const Tensor& obs) {
  if (mu.shape() != sigma.shape() || mu.shape() != obs.shape()) {
    throw DimensionError("crps_gaussian_field: shapes " + shape_string(mu.shape()) + ", " +
                         shape_string(sigma.shape()) + ", " + shape_string(obs.shape()));
  }
  Tensor out(mu.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = crps_gaussian(mu[i], sigma[i], obs[i]);
  return out;
}

double crps_numeric(const std::function<double(double)>& cdf, double x, double lo, double hi,
                    std::span<const double> breakpoints, double abs_tol) {
  if (!(hi > lo)) throw DomainError("crps_numeric: empty integration range");
  std::vector<double> cuts{std::min(lo, x), std::max(hi, x), x};
  for (double b : breakpoints) {
    if (b > cuts[0] && b < cuts[1]) cuts.push_back(b);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = cuts[i], b = cuts[i + 1];
    // Evaluate strictly inside [a, b] so the indicator is constant on it.
    const double mid_step = 0.5 * (a + b) >= x ? 1.0 : 0.0;
    auto piece = [&](double t) {
      const double d = cdf(t) - mid_step;
      return d * d;
    };
    double err = 0.0;
    const double v =
        boost::math::quadrature::gauss_kronrod<double, 31>::integrate(piece, a, b, 20, 1e-13, &err);
    if (!std::isfinite(v) || err > abs_tol) {
      throw NumericError("crps_numeric: quadrature did not converge on [" + std::to_string(a) +
                         ", " + std::to_string(b) + "]");
    }
    total += v;
  }
  return total;
}

double crps_numeric_gaussian(double mu, double sigma, double x) {
  if (!(sigma > 0.0)) throw DomainError("crps_numeric_gaussian: sigma must be positive");
  return crps_numeric([&](double t) { return normal_cdf((t - mu) / sigma); }, x, mu - 12.0 * sigma,
                      mu + 12.0 * sigma);
}

double eecrps(const Tensor& crps, const Tensor& efi) {
  if (crps.shape() != efi.shape()) {
    throw DimensionError("eecrps: shapes " + shape_string(crps.shape()) + " and " +
                         shape_string(efi.shape()) + " differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < crps.numel(); ++i) {
    if (std::abs(efi[i]) > 1.0) throw DomainError("eecrps: EFI outside [-1, 1]");
    s += std::abs(efi[i]) * crps[i];
  }
  return s / static_cast<double>(crps.numel());
}

SeepsMatrix seeps_matrix(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("seeps_matrix: p must be in (0, 1)");
  const double a = 1.0 / (1.0 - p), b = 1.0 / p, c = 3.0 / (2.0 + p);
  return {{{0.0, 0.5 * a, 0.5 * 4.0 * a},
           {0.5 * b, 0.0, 0.5 * 3.0 * a},
           {0.5 * (b + c), 0.5 * c, 0.0}}};
}

int seeps_category(double value, double dry_threshold, double light_heavy) {
  if (value <= dry_threshold) return 0;
  return value <= light_heavy ? 1 : 2;
}

SeepsClimatology seeps_climatology(const Tensor& obs, double dry_threshold) {
  const FieldDims d = field_dims(obs, "seeps_climatology");
  SeepsClimatology c;
  c.dry_threshold = dry_threshold;
  c.dry_prob = Tensor({d.h, d.w});
  c.light_heavy = Tensor({d.h, d.w});
  std::vector<double> wet;
  for (std::size_t p = 0; p < d.h * d.w; ++p) {
    std::size_t dry = 0;
    wet.clear();
    for (std::size_t k = 0; k < d.n; ++k) {
      const double v = obs[k * d.h * d.w + p];
      if (v <= dry_threshold) {
        ++dry;
      } else {
        wet.push_back(v);
      }
    }
    c.dry_prob[p] = static_cast<double>(dry) / static_cast<double>(d.n);
    c.light_heavy[p] = wet.empty() ? dry_threshold : quantile_linear(wet, 2.0 / 3.0);
  }
  return c;
}

double seeps(const Tensor& pred, const Tensor& obs, const SeepsClimatology& clim,
             const Tensor& weights) {
  const FieldDims d = paired(pred, obs, "seeps");
  check_weights(weights, d.h, "seeps");
  check_plane(clim.dry_prob, d, "seeps climatology");
  check_plane(clim.light_heavy, d, "seeps climatology");
  double num = 0.0, den = 0.0;
  const double inv_n = 1.0 / static_cast<double>(d.n);
  for (std::size_t i = 0; i < d.h; ++i) {
    for (std::size_t j = 0; j < d.w; ++j) {
      const std::size_t p = i * d.w + j;
      const double prob = clim.dry_prob[p];
      if (!(prob > 0.1 && prob < 0.85)) continue;
      std::array<std::array<std::size_t, 3>, 3> table{};
      for (std::size_t k = 0; k < d.n; ++k) {
        const std::size_t at = k * d.h * d.w + p;
        const int f = seeps_category(pred[at], clim.dry_threshold, clim.light_heavy[p]);
        const int o = seeps_category(obs[at], clim.dry_threshold, clim.light_heavy[p]);
        ++table[f][o];
      }
      const SeepsMatrix s = seeps_matrix(prob);
      double score = 0.0;
      for (int f = 0; f < 3; ++f) {
        for (int o = 0; o < 3; ++o) score += static_cast<double>(table[f][o]) * inv_n * s[f][o];
      }
      num += weights[i] * score;
      den += weights[i];
    }
  }
  if (den == 0.0) throw UndefinedValueError("seeps: every point is outside the climate window");
  return num / den;
}

double threat_score(const Tensor& pred, const Tensor& obs, const Tensor& thresholds) {
  const FieldDims d = paired(pred, obs, "threat_score");
  check_plane(thresholds, d, "threat_score thresholds");
  std::size_t hits = 0, misses = 0, false_alarms = 0;
  for (std::size_t k = 0; k < d.n; ++k) {
    for (std::size_t p = 0; p < d.h * d.w; ++p) {
      const std::size_t at = k * d.h * d.w + p;
      const bool f = pred[at] > thresholds[p];
      const bool o = obs[at] > thresholds[p];
      hits += f && o;
      misses += !f && o;
      false_alarms += f && !o;
    }
  }
  const std::size_t denom = hits + misses + false_alarms;
  if (denom == 0) throw UndefinedValueError("threat_score: no events forecast or observed");
  return static_cast<double>(hits) / static_cast<double>(denom);
}

Tensor mean_field(const Tensor& fields) {
  const FieldDims d = field_dims(fields, "mean_field");
  Tensor out({d.h, d.w});
  for (std::size_t k = 0; k < d.n; ++k) {
    for (std::size_t p = 0; p < d.h * d.w; ++p) out[p] += fields[k * d.h * d.w + p];
  }
  for (auto& v : out.data()) v /= static_cast<double>(d.n);
  return out;
}

Tensor quantile_field(const Tensor& fields, double q) {
  const FieldDims d = field_dims(fields, "quantile_field");
  Tensor out({d.h, d.w});
  std::vector<double> column(d.n);
  for (std::size_t p = 0; p < d.h * d.w; ++p) {
    for (std::size_t k = 0; k < d.n; ++k) column[k] = fields[k * d.h * d.w + p];
    out[p] = quantile_linear(column, q);
  }
  return out;
}

}  // namespace wxpeft
