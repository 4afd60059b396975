// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/tasks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>

#include "wxpeft/config.hpp"
#include "wxpeft/error.hpp"
#include "wxpeft/metrics.hpp"
#include "wxpeft/ops.hpp"
#include "wxpeft/rng.hpp"
#include "wxpeft/serialize.hpp"

namespace wxpeft {

namespace {

constexpr double kPi = std::numbers::pi;

std::string stream_name(bool source, std::string_view task, std::string_view what, std::size_t j) {
  std::string s = source ? "source/" : "";
  s += task;
  s += "/";
  s += what;
  s += "/";
  s += std::to_string(j);
  return s;
}

// Sum of `count` random plane waves with |kx|, |ky| <= kmax, written into
// out[0..h*w). Low wavenumbers dominate.
void wave_field(RngStream& rng, std::size_t h, std::size_t w, int kmax, std::size_t count,
                double* out) {
  std::fill(out, out + h * w, 0.0);
  const auto span = static_cast<std::uint64_t>(2 * kmax + 1);
  for (std::size_t c = 0; c < count; ++c) {
    int kx = 0, ky = 0;
    do {
      kx = static_cast<int>(rng.below(span)) - kmax;
      ky = static_cast<int>(rng.below(span)) - kmax;
    } while (kx == 0 && ky == 0);
    const double amp = rng.normal() / std::sqrt(1.0 + 0.15 * (kx * kx + ky * ky));
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double arg = 2.0 * kPi * (kx * static_cast<double>(x) / static_cast<double>(w) +
                                        ky * static_cast<double>(y) / static_cast<double>(h));
        out[y * w + x] += amp * std::cos(arg + phase);
      }
    }
  }
}

std::vector<std::string> default_names(std::size_t n, const std::vector<std::string>& preferred) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) {
    names.push_back(i < preferred.size() && n <= preferred.size() ? preferred[i]
                                                                   : "var" + std::to_string(i));
  }
  return names;
}

void set_splits(GridDataset& d) {
  const std::size_t n = d.size();
  d.train_end = 8 * n / 10;
  d.val_end = 9 * n / 10;
  if (d.train_end == 0) throw ConfigError("dataset needs at least 2 samples for a training split");
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += format_double(v[i]);
  }
  return s;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += v[i];
  }
  return s;
}

void copy_sample(Tensor& dst, std::size_t j, const Tensor& sample) {
  const std::size_t n = sample.numel();
  std::copy(sample.data().begin(), sample.data().end(), dst.data().begin() + j * n);
}

}  // namespace

TaskKind parse_task(std::string_view id) {
  if (id == "downscale") return TaskKind::downscale;
  if (id == "ensemble") return TaskKind::ensemble;
  if (id == "precip") return TaskKind::precip;
  throw ConfigError("unknown task '" + std::string(id) + "' (expected downscale, ensemble or precip)");
}

std::string_view to_string(TaskKind task) {
  switch (task) {
    case TaskKind::downscale: return "downscale";
    case TaskKind::ensemble: return "ensemble";
    case TaskKind::precip: return "precip";
  }
  return "?";
}

Split parse_split(std::string_view id) {
  if (id == "train") return Split::train;
  if (id == "val") return Split::val;
  if (id == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(id) + "'");
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::vector<double> grid_latitudes(std::size_t height) {
  std::vector<double> lat(height);
  for (std::size_t i = 0; i < height; ++i) {
    lat[i] = -90.0 + (static_cast<double>(i) + 0.5) * 180.0 / static_cast<double>(height);
  }
  return lat;
}

Tensor latitude_weights(const std::vector<double>& lat_deg) {
  if (lat_deg.empty()) throw ConfigError("latitude_weights: empty grid");
  std::vector<double> c(lat_deg.size());
  double total = 0.0;
  for (std::size_t i = 0; i < lat_deg.size(); ++i) {
    if (!(lat_deg[i] > -90.0 && lat_deg[i] < 90.0)) {
      throw ConfigError("latitude_weights: latitude " + format_double(lat_deg[i]) +
                        " outside (-90, 90)");
    }
    c[i] = std::cos(lat_deg[i] * kPi / 180.0);
    total += c[i];
  }
  const double mean = total / static_cast<double>(c.size());
  if (!(mean > 1e-12)) throw ConfigError("latitude_weights: all cosines vanish");
  for (double& v : c) v /= mean;
  const std::size_t h = c.size();
  return Tensor({h}, std::move(c));
}

NormStats compute_norm(const Tensor& fields, std::size_t begin, std::size_t end) {
  if (fields.rank() != 4) throw RankError("compute_norm expects N x C x H x W");
  if (begin >= end || end > fields.dim(0)) throw ContractError("compute_norm: bad sample range");
  const std::size_t c = fields.dim(1), hw = fields.dim(2) * fields.dim(3);
  NormStats s;
  s.mean.assign(c, 0.0);
  s.std.assign(c, 0.0);
  const double count = static_cast<double>((end - begin) * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t j = begin; j < end; ++j) {
      const double* p = fields.data().data() + (j * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) sum += p[i];
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (std::size_t j = begin; j < end; ++j) {
      const double* p = fields.data().data() + (j * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mean) * (p[i] - mean);
    }
    const double sd = std::sqrt(ss / count);
    s.mean[ch] = mean;
    s.std[ch] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

namespace {

Tensor apply_norm(const Tensor& sample, const NormStats& stats, bool forward) {
  if (sample.rank() != 3 || sample.dim(0) != stats.mean.size()) {
    throw DimensionError("normalize: sample " + shape_string(sample.shape()) + " vs " +
                         std::to_string(stats.mean.size()) + " channels");
  }
  Tensor out = sample;
  const std::size_t hw = sample.dim(1) * sample.dim(2);
  for (std::size_t ch = 0; ch < stats.mean.size(); ++ch) {
    double* p = out.data().data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      p[i] = forward ? (p[i] - stats.mean[ch]) / stats.std[ch] : p[i] * stats.std[ch] + stats.mean[ch];
    }
  }
  return out;
}

}  // namespace

Tensor normalize(const Tensor& sample, const NormStats& stats) {
  return apply_norm(sample, stats, true);
}

Tensor denormalize(const Tensor& sample, const NormStats& stats) {
  return apply_norm(sample, stats, false);
}

std::pair<std::size_t, std::size_t> GridDataset::range(Split split) const {
  switch (split) {
    case Split::train: return {0, train_end};
    case Split::val: return {train_end, val_end};
    case Split::test: return {val_end, size()};
  }
  return {0, 0};
}

Tensor GridDataset::sample_of(const Tensor& fields, std::size_t j) {
  if (fields.rank() < 2 || j >= fields.dim(0)) {
    throw ContractError("sample index " + std::to_string(j) + " out of range for " +
                        shape_string(fields.shape()));
  }
  Shape s(fields.shape().begin() + 1, fields.shape().end());
  const std::size_t n = shape_numel(s);
  std::vector<double> v(fields.data().begin() + j * n, fields.data().begin() + (j + 1) * n);
  return Tensor(std::move(s), std::move(v));
}

Tensor GridDataset::input(std::size_t j) const { return sample_of(inputs, j); }
Tensor GridDataset::target(std::size_t j) const { return sample_of(targets, j); }

GridDataset gen_downscale(std::uint64_t seed, const DownscaleOptions& o) {
  if (o.n < 2 || o.vars == 0 || o.height == 0 || o.width == 0) {
    throw ConfigError("gen_downscale: need n >= 2 and a non-empty grid");
  }
  if (o.factor == 0 || o.height % o.factor || o.width % o.factor) {
    throw ConfigError("gen_downscale: grid " + std::to_string(o.height) + "x" +
                      std::to_string(o.width) + " not divisible by factor " +
                      std::to_string(o.factor));
  }
  const std::size_t h = o.height, w = o.width, hw = h * w, v = o.vars;
  static constexpr double kTarget[3][3] = {{1, 0, 0}, {0.6, 1, 0}, {-0.4, 0.5, 1}};
  static constexpr double kSource[3][3] = {{1, 0, 0}, {-0.3, 1, 0}, {0.2, -0.5, 1}};
  const auto& coupling = o.source ? kSource : kTarget;

  // Fixed fine-scale terrain of each physics family, below the coarse
  // grid's resolution. Its imprint is modulated by the large-scale state.
  Tensor terrain({v, h, w});
  {
    RngStream rng(0x7a46e7ULL, "downscale/terrain");
    for (std::size_t c = 0; c < v; ++c) {
      double* out = terrain.data().data() + c * hw;
      for (int wave = 0; wave < 6; ++wave) {
        const int sx = rng.below(2) ? 1 : -1;
        const int kx = sx * static_cast<int>(2 + rng.below(5));
        const int ky = static_cast<int>(2 + rng.below(5));
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        const double amp = 0.5 + 0.5 * rng.uniform();
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double arg = 2.0 * kPi * (kx * static_cast<double>(x) / static_cast<double>(w) +
                                            ky * static_cast<double>(y) / static_cast<double>(h));
            out[y * w + x] += amp * std::cos(arg + phase) / std::sqrt(6.0);
          }
        }
      }
    }
  }

  GridDataset d;
  d.task = TaskKind::downscale;
  d.seed = seed;
  d.source = o.source;
  d.input_vars = default_names(v, {"t2m", "u10", "v10"});
  d.target_vars = d.input_vars;
  d.inputs = Tensor({o.n, v, h, w});
  d.targets = Tensor({o.n, v, h, w});
  d.coarse = Tensor({o.n, v, h / o.factor, w / o.factor});
  const auto lat = grid_latitudes(h);
  d.lat = Tensor({h}, lat);

  std::vector<double> base(v * hw);
  for (std::size_t j = 0; j < o.n; ++j) {
    RngStream rng(seed, stream_name(o.source, "downscale", "truth", j));
    for (std::size_t c = 0; c < v; ++c) wave_field(rng, h, w, 3, 8, base.data() + c * hw);
    Tensor truth({v, h, w});
    for (std::size_t c = 0; c < v; ++c) {
      for (std::size_t u = 0; u < v; ++u) {
        const double k = (c < 3 && u < 3) ? coupling[c][u] : (c == u ? 1.0 : 0.0);
        if (k == 0.0) continue;
        for (std::size_t i = 0; i < hw; ++i) truth[c * hw + i] += k * base[u * hw + i];
      }
    }
    if (!o.source && v >= 3) {
      for (std::size_t i = 0; i < hw; ++i) truth[2 * hw + i] += 0.5 * truth[i] * truth[hw + i];
    }
    for (std::size_t c = 0; c < v; ++c) {
      for (std::size_t i = 0; i < hw; ++i) {
        truth[c * hw + i] += o.detail * terrain[c * hw + i] * (1.0 + 0.8 * std::tanh(base[i]));
      }
    }
    Tensor coarse = avg_pool_2d(truth, o.factor, o.factor);
    Tensor input = bilinear_upsample_2d(coarse, h, w);
    copy_sample(d.targets, j, truth);
    copy_sample(d.inputs, j, input);
    copy_sample(*d.coarse, j, coarse);
  }
  set_splits(d);
  d.input_norm = compute_norm(d.inputs, 0, d.train_end);
  d.target_norm = d.input_norm;
  return d;
}

std::pair<Tensor, Tensor> ensemble_moments(const std::vector<Tensor>& members, double floor) {
  if (members.size() < 2) throw ContractError("ensemble_moments: need at least 2 members");
  const Shape& s = members.front().shape();
  for (const Tensor& m : members) {
    if (m.shape() != s) throw DimensionError("ensemble_moments: member shapes differ");
  }
  const double m = static_cast<double>(members.size());
  Tensor mean(s), sd(s);
  for (std::size_t i = 0; i < mean.numel(); ++i) {
    double sum = 0.0;
    for (const Tensor& t : members) sum += t[i];
    const double mu = sum / m;
    double ss = 0.0;
    for (const Tensor& t : members) ss += (t[i] - mu) * (t[i] - mu);
    mean[i] = mu;
    sd[i] = std::max(std::sqrt(ss / m), floor);
  }
  return {std::move(mean), std::move(sd)};
}

GridDataset gen_ensemble(std::uint64_t seed, const EnsembleOptions& o) {
  if (o.members < 2) throw ConfigError("gen_ensemble: need at least 2 members");
  if (o.n < 2 || o.vars == 0 || o.height == 0 || o.width == 0) {
    throw ConfigError("gen_ensemble: need n >= 2 and a non-empty grid");
  }
  const std::size_t h = o.height, w = o.width, hw = h * w, v = o.vars;
  const double bias_amp = o.source ? 0.5 * o.bias_amplitude : o.bias_amplitude;
  const double family_phase = o.source ? 1.9 : 0.4;

  // Fixed systematic bias and noise-modulation patterns of the forecast system.
  Tensor bias_pattern({v, h, w}), noise_pattern({v, h, w});
  for (std::size_t c = 0; c < v; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
        const double fx = static_cast<double>(x) / static_cast<double>(w);
        const double cc = static_cast<double>(c);
        bias_pattern[(c * h + y) * w + x] =
            std::sin(2.0 * kPi * fx + family_phase + cc) * std::cos(kPi * (fy - 0.5) * (1.0 + cc));
        noise_pattern[(c * h + y) * w + x] = std::sin(kPi * fy) * std::cos(2.0 * kPi * fx - cc);
      }
    }
  }

  GridDataset d;
  d.task = TaskKind::ensemble;
  d.seed = seed;
  d.source = o.source;
  d.target_vars = default_names(v, {"t850", "z500"});
  for (const auto& name : d.target_vars) d.input_vars.push_back(name + "_mean");
  for (const auto& name : d.target_vars) d.input_vars.push_back(name + "_std");
  d.inputs = Tensor({o.n, 2 * v, h, w});
  d.targets = Tensor({o.n, v, h, w});
  d.ens_mean = Tensor({o.n, v, h, w});
  d.ens_std = Tensor({o.n, v, h, w});
  d.efi = Tensor({o.n, v, h, w});
  d.lat = Tensor({h}, grid_latitudes(h));

  for (std::size_t j = 0; j < o.n; ++j) {
    RngStream truth_rng(seed, stream_name(o.source, "ensemble", "truth", j));
    Tensor truth({v, h, w});
    for (std::size_t c = 0; c < v; ++c) wave_field(truth_rng, h, w, 3, 8, truth.data().data() + c * hw);
    RngStream noise_rng(seed, stream_name(o.source, "ensemble", "members", j));
    std::vector<Tensor> members;
    members.reserve(o.members);
    for (std::size_t m = 0; m < o.members; ++m) {
      Tensor member = truth;
      for (std::size_t i = 0; i < member.numel(); ++i) {
        const double sd = o.noise_std * (1.0 + o.noise_variation * noise_pattern[i]);
        const double eps = noise_rng.normal();
        member[i] += bias_amp * bias_pattern[i] + sd * eps;
      }
      members.push_back(std::move(member));
    }
    auto [mu, sd] = ensemble_moments(members);
    Tensor efi = truth;
    for (double& e : efi.data()) e = std::tanh(0.8 * e);
    Tensor input({2 * v, h, w});
    std::copy(mu.data().begin(), mu.data().end(), input.data().begin());
    std::copy(sd.data().begin(), sd.data().end(), input.data().begin() + v * hw);
    copy_sample(d.inputs, j, input);
    copy_sample(d.targets, j, truth);
    copy_sample(*d.ens_mean, j, mu);
    copy_sample(*d.ens_std, j, sd);
    copy_sample(*d.efi, j, efi);
  }
  set_splits(d);
  d.input_norm = compute_norm(d.inputs, 0, d.train_end);
  d.target_norm = compute_norm(d.targets, 0, d.train_end);
  return d;
}

namespace {

double periodic_sample(const double* q, std::size_t h, std::size_t w, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const double ty = y - fy, tx = x - fx;
  const auto wrap = [](double i, std::size_t n) {
    const auto m = static_cast<long long>(n);
    long long k = static_cast<long long>(i) % m;
    return static_cast<std::size_t>(k < 0 ? k + m : k);
  };
  const std::size_t y0 = wrap(fy, h), y1 = wrap(fy + 1.0, h);
  const std::size_t x0 = wrap(fx, w), x1 = wrap(fx + 1.0, w);
  const double top = q[y0 * w + x0] * (1.0 - tx) + q[y0 * w + x1] * tx;
  const double bottom = q[y1 * w + x0] * (1.0 - tx) + q[y1 * w + x1] * tx;
  return top * (1.0 - ty) + bottom * ty;
}

void advect_diffuse(std::vector<double>& q, std::size_t h, std::size_t w, double u, double v,
                    double diffusion) {
  std::vector<double> a(q.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      a[y * w + x] = periodic_sample(q.data(), h, w, static_cast<double>(y) - v,
                                     static_cast<double>(x) - u);
    }
  }
  if (diffusion != 0.0) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double c = a[y * w + x];
        const double lap = a[((y + h - 1) % h) * w + x] + a[((y + 1) % h) * w + x] +
                           a[y * w + (x + w - 1) % w] + a[y * w + (x + 1) % w] - 4.0 * c;
        q[y * w + x] = c + diffusion * lap;
      }
    }
  } else {
    q = std::move(a);
  }
}

}  // namespace

GridDataset gen_precip(std::uint64_t seed, const PrecipOptions& o) {
  if (o.n < 2 || o.leads == 0 || o.height == 0 || o.width == 0) {
    throw ConfigError("gen_precip: need n >= 2, leads >= 1 and a non-empty grid");
  }
  if (!(o.threshold_quantile >= 0.0 && o.threshold_quantile <= 1.0)) {
    throw ConfigError("gen_precip: threshold_quantile must lie in [0, 1]");
  }
  if (o.diffusion < 0.0 || o.diffusion > 0.25) {
    throw ConfigError("gen_precip: diffusion must lie in [0, 0.25]");
  }
  const std::size_t h = o.height, w = o.width, hw = h * w;
  const double wind_max = o.source ? 0.5 * o.wind_max : o.wind_max;
  const double diffusion = o.source ? 0.5 * o.diffusion : o.diffusion;

  GridDataset d;
  d.task = TaskKind::precip;
  d.seed = seed;
  d.source = o.source;
  d.input_vars = {"tp", "q", "u", "v"};
  for (std::size_t l = 1; l <= o.leads; ++l) d.target_vars.push_back("tp_lead" + std::to_string(l));
  d.inputs = Tensor({o.n, 4, h, w});
  d.targets = Tensor({o.n, o.leads, h, w});
  d.lat = Tensor({h}, grid_latitudes(h));

  for (std::size_t j = 0; j < o.n; ++j) {
    RngStream rng(seed, stream_name(o.source, "precip", "state", j));
    std::vector<double> q(hw);
    wave_field(rng, h, w, 3, 8, q.data());
    const double u = rng.uniform(-wind_max, wind_max);
    const double v = rng.uniform(-wind_max, wind_max);
    const double thr = quantile_linear(q, o.threshold_quantile);
    auto precip = [&](const std::vector<double>& field, double* out) {
      for (std::size_t i = 0; i < hw; ++i) out[i] = std::max(0.0, field[i] - thr) * o.gain;
    };
    Tensor input({4, h, w});
    precip(q, input.data().data());
    std::copy(q.begin(), q.end(), input.data().begin() + hw);
    std::fill(input.data().begin() + 2 * hw, input.data().begin() + 3 * hw, u);
    std::fill(input.data().begin() + 3 * hw, input.data().end(), v);
    Tensor target({o.leads, h, w});
    for (std::size_t l = 0; l < o.leads; ++l) {
      advect_diffuse(q, h, w, u, v, diffusion);
      precip(q, target.data().data() + l * hw);
    }
    copy_sample(d.inputs, j, input);
    copy_sample(d.targets, j, target);
  }
  set_splits(d);
  d.input_norm = compute_norm(d.inputs, 0, d.train_end);
  d.target_norm = compute_norm(d.targets, 0, d.train_end);
  return d;
}

std::pair<Tensor, Tensor> gaussian_correction(const Tensor& out1, const Tensor& out2,
                                              const Tensor& mu_ens, const Tensor& sigma_ens) {
  if (out1.shape() != mu_ens.shape() || out2.shape() != mu_ens.shape() ||
      sigma_ens.shape() != mu_ens.shape()) {
    throw DimensionError("gaussian_correction: shape mismatch");
  }
  Tensor mu = mu_ens, sigma = sigma_ens;
  for (std::size_t i = 0; i < mu.numel(); ++i) {
    mu[i] = out1[i] * sigma_ens[i] + mu_ens[i];
    sigma[i] = std::exp(out2[i]) * sigma_ens[i];
  }
  return {std::move(mu), std::move(sigma)};
}

std::pair<ad::Var, ad::Var> gaussian_correction(ad::Var out1, ad::Var out2, const Tensor& mu_ens,
                                                const Tensor& sigma_ens) {
  ad::Graph& g = out1.graph();
  const ad::Var s = g.constant(sigma_ens);
  ad::Var mu = ad::add(ad::mul(out1, s), g.constant(mu_ens));
  ad::Var sigma = ad::mul(ad::exp(out2), s);
  return {mu, sigma};
}

void save_dataset(const std::filesystem::path& dir, const GridDataset& d) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FileError("cannot create directory " + dir.string() + ": " + ec.message());
  std::string m;
  auto kv = [&](const std::string& k, const std::string& v) { m += k + " = " + v + "\n"; };
  kv("task", std::string(to_string(d.task)));
  kv("seed", std::to_string(d.seed));
  kv("source", d.source ? "true" : "false");
  kv("n", std::to_string(d.size()));
  kv("V", std::to_string(d.inputs.dim(1)));
  kv("V_out", std::to_string(d.targets.dim(1)));
  kv("H", std::to_string(d.height()));
  kv("W", std::to_string(d.width()));
  kv("input_vars", join(d.input_vars));
  kv("target_vars", join(d.target_vars));
  kv("train_end", std::to_string(d.train_end));
  kv("val_end", std::to_string(d.val_end));
  kv("input_mean", join_doubles(d.input_norm.mean));
  kv("input_std", join_doubles(d.input_norm.std));
  kv("target_mean", join_doubles(d.target_norm.mean));
  kv("target_std", join_doubles(d.target_norm.std));
  std::vector<std::string> extras;
  if (d.ens_mean) extras.push_back("ens_mean");
  if (d.ens_std) extras.push_back("ens_std");
  if (d.efi) extras.push_back("efi");
  if (d.coarse) extras.push_back("coarse");
  kv("extras", join(extras));
  save_tensor(dir / "inputs.wpft", d.inputs);
  save_tensor(dir / "targets.wpft", d.targets);
  save_tensor(dir / "lat.wpft", d.lat);
  if (d.ens_mean) save_tensor(dir / "ens_mean.wpft", *d.ens_mean);
  if (d.ens_std) save_tensor(dir / "ens_std.wpft", *d.ens_std);
  if (d.efi) save_tensor(dir / "efi.wpft", *d.efi);
  if (d.coarse) save_tensor(dir / "coarse.wpft", *d.coarse);
  write_file(dir / "manifest.txt", m);
}

GridDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  const std::string text = read_file(manifest_path);
  std::map<std::string, std::string> kv;
  try {
    for (auto& p : parse_key_values(text, manifest_path.string())) kv[p.key] = p.value;
  } catch (const ConfigError& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError(manifest_path.string() + ": missing key '" + k + "'");
    return it->second;
  };
  auto uint = [&](const std::string& k) -> std::size_t {
    try {
      return static_cast<std::size_t>(parse_uint(get(k), k));
    } catch (const ConfigError& e) {
      throw FormatError(manifest_path.string() + ": " + e.what());
    }
  };
  auto doubles = [&](const std::string& k) {
    std::vector<double> out;
    try {
      for (const auto& item : split_list(get(k))) out.push_back(parse_double(item, k));
    } catch (const ConfigError& e) {
      throw FormatError(manifest_path.string() + ": " + e.what());
    }
    return out;
  };

  GridDataset d;
  try {
    d.task = parse_task(get("task"));
    d.seed = parse_uint(get("seed"), "seed");
    d.source = parse_bool(get("source"), "source");
  } catch (const ConfigError& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  const std::size_t n = uint("n"), v = uint("V"), v_out = uint("V_out"), h = uint("H"),
                    w = uint("W");
  d.input_vars = split_list(get("input_vars"));
  d.target_vars = split_list(get("target_vars"));
  d.train_end = uint("train_end");
  d.val_end = uint("val_end");
  d.input_norm = {doubles("input_mean"), doubles("input_std")};
  d.target_norm = {doubles("target_mean"), doubles("target_std")};

  auto check = [&](const std::string& what, const Tensor& t, const Shape& want) {
    if (t.shape() != want) {
      throw FormatError(what + ": shape " + shape_string(t.shape()) + " does not match manifest " +
                        shape_string(want));
    }
  };
  d.inputs = load_tensor(dir / "inputs.wpft");
  check("inputs.wpft", d.inputs, {n, v, h, w});
  d.targets = load_tensor(dir / "targets.wpft");
  check("targets.wpft", d.targets, {n, v_out, h, w});
  d.lat = load_tensor(dir / "lat.wpft");
  check("lat.wpft", d.lat, {h});
  if (d.input_vars.size() != v || d.target_vars.size() != v_out ||
      d.input_norm.mean.size() != v || d.input_norm.std.size() != v ||
      d.target_norm.mean.size() != v_out || d.target_norm.std.size() != v_out) {
    throw FormatError(manifest_path.string() + ": variable lists do not match channel counts");
  }
  if (d.train_end == 0 || d.train_end > d.val_end || d.val_end > n) {
    throw FormatError(manifest_path.string() + ": invalid split boundaries");
  }
  for (const auto& extra : split_list(get("extras"))) {
    Tensor t = load_tensor(dir / (extra + ".wpft"));
    if (extra == "coarse") {
      if (t.rank() != 4 || t.dim(0) != n || t.dim(1) != v_out) {
        throw FormatError("coarse.wpft: shape " + shape_string(t.shape()) + " does not match manifest");
      }
      d.coarse = std::move(t);
      continue;
    }
    check(extra + ".wpft", t, {n, v_out, h, w});
    if (extra == "ens_mean") d.ens_mean = std::move(t);
    else if (extra == "ens_std") d.ens_std = std::move(t);
    else if (extra == "efi") d.efi = std::move(t);
    else throw FormatError(manifest_path.string() + ": unknown extra field '" + extra + "'");
  }
  if (d.task == TaskKind::ensemble && (!d.ens_mean || !d.ens_std || !d.efi)) {
    throw FormatError(manifest_path.string() + ": ensemble dataset lacks member statistics");
  }
  if (!d.inputs.all_finite() || !d.targets.all_finite()) {
    throw FormatError(dir.string() + ": dataset contains non-finite values");
  }
  return d;
}

}  // namespace wxpeft
