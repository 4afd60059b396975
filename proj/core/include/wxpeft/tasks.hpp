// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wxpeft/autodiff.hpp"
#include "wxpeft/tensor.hpp"

namespace wxpeft {

enum class TaskKind { downscale, ensemble, precip };

TaskKind parse_task(std::string_view id);
std::string_view to_string(TaskKind task);

/// Cell-centred latitudes, pole-excluded: -90 + (i + 0.5) * 180 / H.
std::vector<double> grid_latitudes(std::size_t height);
/// cos(lat) normalized to unit mean.
Tensor latitude_weights(const std::vector<double>& lat_deg);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Per-channel mean and population std of fields [N x C x H x W] over
/// samples [begin, end). Zero spreads are replaced by 1.
NormStats compute_norm(const Tensor& fields, std::size_t begin, std::size_t end);
/// (x - mean_c) / std_c for one sample [C x H x W].
Tensor normalize(const Tensor& sample, const NormStats& stats);
Tensor denormalize(const Tensor& sample, const NormStats& stats);

enum class Split { train, val, test };
Split parse_split(std::string_view id);
std::string_view to_string(Split split);

struct GridDataset {
  TaskKind task = TaskKind::downscale;
  std::uint64_t seed = 0;
  bool source = false;
  std::vector<std::string> input_vars;
  std::vector<std::string> target_vars;
  Tensor inputs;   // N x V x H x W, physical units
  Tensor targets;  // N x V_out x H x W
  Tensor lat;      // H, degrees
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  NormStats input_norm;
  NormStats target_norm;
  // Ensemble task: raw member statistics and the supplied EFI field,
  // each N x n_vars x H x W.
  std::optional<Tensor> ens_mean, ens_std, efi;
  // Downscale task: the coarse fields the inputs were upsampled from.
  std::optional<Tensor> coarse;

  std::size_t size() const { return inputs.dim(0); }
  std::size_t height() const { return inputs.dim(2); }
  std::size_t width() const { return inputs.dim(3); }
  std::pair<std::size_t, std::size_t> range(Split split) const;

  Tensor input(std::size_t j) const;
  Tensor target(std::size_t j) const;
  /// Slice j of one of the optional per-sample fields.
  static Tensor sample_of(const Tensor& fields, std::size_t j);
};

struct DownscaleOptions {
  std::size_t n = 100;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t factor = 4;
  std::size_t vars = 3;
  double detail = 0.6;  // amplitude of the terrain-driven fine scale
  bool source = false;
};

struct EnsembleOptions {
  std::size_t n = 100;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t vars = 2;
  std::size_t members = 10;
  double bias_amplitude = 0.6;
  double noise_std = 0.5;
  double noise_variation = 0.5;  // relative spatial modulation of the noise std
  bool source = false;
};

struct PrecipOptions {
  std::size_t n = 100;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t leads = 3;
  double wind_max = 1.5;        // grid cells per step
  double diffusion = 0.1;
  double threshold_quantile = 0.6;
  double gain = 5.0;
  bool source = false;
};

inline constexpr double kEnsembleStdFloor = 1e-3;

GridDataset gen_downscale(std::uint64_t seed, const DownscaleOptions& options = {});
GridDataset gen_ensemble(std::uint64_t seed, const EnsembleOptions& options = {});
GridDataset gen_precip(std::uint64_t seed, const PrecipOptions& options = {});

/// Mean and population std over members [M x ...], std floored.
std::pair<Tensor, Tensor> ensemble_moments(const std::vector<Tensor>& members,
                                           double floor = kEnsembleStdFloor);

/// mu = out1 * sigma_ens + mu_ens, sigma = exp(out2) * sigma_ens.
std::pair<Tensor, Tensor> gaussian_correction(const Tensor& out1, const Tensor& out2,
                                              const Tensor& mu_ens, const Tensor& sigma_ens);
std::pair<ad::Var, ad::Var> gaussian_correction(ad::Var out1, ad::Var out2, const Tensor& mu_ens,
                                                const Tensor& sigma_ens);

void save_dataset(const std::filesystem::path& dir, const GridDataset& data);
GridDataset load_dataset(const std::filesystem::path& dir);

}  // namespace wxpeft
