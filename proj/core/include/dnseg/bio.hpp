// Copyright 2026 The dnseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnseg/divnorm.hpp"
#include "dnseg/tensor.hpp"

namespace dnseg::bio {

/// Oriented second-derivative-of-Gaussian band-pass kernels plus one
/// Gaussian low-pass residual. Scale s uses sigma = base_sigma * 2^s;
/// orientation o differentiates along angle o * pi / orientations, so
/// orientation 0 responds to vertical structure. Band-pass kernels have zero
/// DC and every kernel has unit L2 norm.
struct FilterBank {
  std::size_t scales = 3;
  std::size_t orientations = 4;
  double base_sigma = 1.0;
  // Band b = scale * orientations + orientation; the low-pass is last.
  std::vector<Tensor> kernels;  // each (1, 1, k, k)

  static FilterBank make(std::size_t scales = 3, std::size_t orientations = 4,
                         double base_sigma = 1.0);

  std::size_t bandpass_count() const noexcept { return scales * orientations; }
  std::size_t band_count() const noexcept { return bandpass_count() + 1; }
  double sigma(std::size_t scale) const;
  std::string band_name(std::size_t band) const;
};

/// Fixed normalization: per band, the denominator is beta plus a
/// Gaussian-weighted (width sigma) pool of |z| from the band itself (weight
/// 1) and from the other orientations of the same scale (weight coupling).
struct FixedDnConfig {
  double beta = 0.1;
  double sigma = 4.0;
  double coupling = 0.5;

  void validate() const;
};

/// Band responses (1, bands, H, W) of a (1, 1, H, W) luminance image;
/// cross-correlation with reflect padding.
Tensor analyze(const Tensor& luminance, const FilterBank& bank);

/// The divisive-normalization parameters implementing FixedDnConfig.
divnorm::DnParams fixed_dn_params(const FilterBank& bank, const FixedDnConfig& config);

Tensor normalize_fixed(const Tensor& z, const FilterBank& bank, const FixedDnConfig& config);

/// Vertical grating whose amplitude rises linearly from left to right:
/// 0.5 + a(x) sin(2 pi x / period), a from amp_left to amp_right.
Tensor contrast_ramp_grating(std::size_t height, std::size_t width, double period,
                             double amp_left, double amp_right);

struct BandReport {
  std::string name;
  std::optional<double> cv_before;
  std::optional<double> cv_after;
  double before_min = 0, before_max = 0, after_min = 0, after_max = 0;
};

struct DemoReport {
  std::size_t height = 0, width = 0, tile = 0;
  bool degenerate = false;
  std::optional<std::size_t> dominant_band;
  std::vector<BandReport> bands;
  // Per-patch (tile) RMS of two bands before and after normalization.
  std::size_t scatter_band_a = 0, scatter_band_b = 0;
  std::vector<std::array<double, 4>> scatter;  // a_before, b_before, a_after, b_after

  nlohmann::json to_json() const;
};

/// Runs analyze + normalize_fixed on an in-memory luminance image.
DemoReport equalize_image(const Tensor& luminance, const FilterBank& bank,
                          const FixedDnConfig& config, std::size_t tile = 8,
                          const std::filesystem::path* out_dir = nullptr);

/// Loads a PGM (or colour image, converted to luminance), writes
/// before/after band images, report.json and scatter.json into out_dir.
DemoReport demo_equalize(const std::filesystem::path& image_path,
                         const std::filesystem::path& out_dir,
                         const FixedDnConfig& config = {}, std::size_t tile = 8);

}  // namespace dnseg::bio
