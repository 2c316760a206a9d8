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

#include "dnseg/bio.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dnseg/binary_io.hpp"
#include "dnseg/data.hpp"
#include "dnseg/error.hpp"
#include "dnseg/image_io.hpp"
#include "dnseg/metrics.hpp"

namespace dnseg::bio {

namespace {

std::size_t gaussian_extent(double sigma) {
  return 2 * static_cast<std::size_t>(std::ceil(3.0 * sigma)) + 1;
}

void unit_l2(Tensor& k) {
  double ss = 0.0;
  for (double v : k.data()) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss);
  for (double& v : k.data()) v *= inv;
}

Tensor second_derivative_kernel(double sigma, double angle) {
  const std::size_t k = gaussian_extent(sigma);
  const auto r = static_cast<double>(k / 2);
  Tensor t({1, 1, k, k});
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < k; ++y) {
    for (std::size_t x = 0; x < k; ++x) {
      const double dx = static_cast<double>(x) - r, dy = static_cast<double>(y) - r;
      const double u = dx * ca + dy * sa;
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      t.at(0, 0, y, x) = (1.0 - u * u / (sigma * sigma)) * g;
    }
  }
  double mean = 0.0;
  for (double v : t.data()) mean += v;
  mean /= static_cast<double>(t.size());
  for (double& v : t.data()) v -= mean;
  unit_l2(t);
  return t;
}

Tensor gaussian_kernel(double sigma, bool unit_sum) {
  const std::size_t k = gaussian_extent(sigma);
  const auto r = static_cast<double>(k / 2);
  Tensor t({1, 1, k, k});
  double sum = 0.0;
  for (std::size_t y = 0; y < k; ++y) {
    for (std::size_t x = 0; x < k; ++x) {
      const double dx = static_cast<double>(x) - r, dy = static_cast<double>(y) - r;
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      t.at(0, 0, y, x) = g;
      sum += g;
    }
  }
  if (unit_sum) {
    for (double& v : t.data()) v /= sum;
  } else {
    unit_l2(t);
  }
  return t;
}

}  // namespace

FilterBank FilterBank::make(std::size_t scales, std::size_t orientations, double base_sigma) {
  if (scales == 0 || orientations == 0 || !(base_sigma > 0.0)) {
    throw ConfigError("filter bank: scales, orientations and base sigma must be positive");
  }
  FilterBank b;
  b.scales = scales;
  b.orientations = orientations;
  b.base_sigma = base_sigma;
  for (std::size_t s = 0; s < scales; ++s) {
    for (std::size_t o = 0; o < orientations; ++o) {
      const double angle = static_cast<double>(o) * std::numbers::pi / static_cast<double>(orientations);
      b.kernels.push_back(second_derivative_kernel(b.sigma(s), angle));
    }
  }
  b.kernels.push_back(gaussian_kernel(b.sigma(scales - 1), false));
  return b;
}

double FilterBank::sigma(std::size_t scale) const {
  return base_sigma * std::ldexp(1.0, static_cast<int>(scale));
}

std::string FilterBank::band_name(std::size_t band) const {
  if (band >= bandpass_count()) return "lowpass";
  return "s" + std::to_string(band / orientations) + "_o" + std::to_string(band % orientations);
}

void FixedDnConfig::validate() const {
  if (!(beta > 0.0) || !(sigma > 0.0) || !(coupling > 0.0) || !std::isfinite(beta) ||
      !std::isfinite(sigma) || !std::isfinite(coupling)) {
    throw ConfigError("fixed DN: beta, sigma and coupling must be positive and finite");
  }
}

Tensor analyze(const Tensor& luminance, const FilterBank& bank) {
  const Shape& s = luminance.shape();
  if (s.n != 1 || s.c != 1) {
    throw ShapeError("analyze: expected a grayscale (1,1,H,W) image, got " + s.str());
  }
  std::size_t kmax = 1;
  for (const Tensor& k : bank.kernels) kmax = std::max(kmax, k.shape().h);
  const std::size_t B = bank.kernels.size();
  Tensor w({B, 1, kmax, kmax});
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor& k = bank.kernels[b];
    const std::size_t off = (kmax - k.shape().h) / 2;
    for (std::size_t y = 0; y < k.shape().h; ++y) {
      for (std::size_t x = 0; x < k.shape().w; ++x) w.at(b, 0, y + off, x + off) = k.at(0, 0, y, x);
    }
  }
  const ConvSpec spec{1, B, kmax, kmax, 1, Padding::kReflect};
  return conv2d_forward(luminance, w, {}, spec);
}

divnorm::DnParams fixed_dn_params(const FilterBank& bank, const FixedDnConfig& config) {
  config.validate();
  const Tensor g = gaussian_kernel(config.sigma, true);
  const std::size_t k = g.shape().h;
  const std::size_t B = bank.band_count();
  divnorm::DnParams p;
  p.beta.assign(B, config.beta);
  p.gamma = Tensor({B, B, k, k});
  auto set = [&](std::size_t i, std::size_t j, double weight) {
    for (std::size_t y = 0; y < k; ++y) {
      for (std::size_t x = 0; x < k; ++x) p.gamma.at(i, j, y, x) = weight * g.at(0, 0, y, x);
    }
  };
  for (std::size_t i = 0; i < bank.bandpass_count(); ++i) {
    const std::size_t scale = i / bank.orientations;
    for (std::size_t o = 0; o < bank.orientations; ++o) {
      const std::size_t j = scale * bank.orientations + o;
      set(i, j, i == j ? 1.0 : config.coupling);
    }
  }
  set(B - 1, B - 1, 1.0);
  return p;
}

Tensor normalize_fixed(const Tensor& z, const FilterBank& bank, const FixedDnConfig& config) {
  if (z.shape().c != bank.band_count()) {
    throw ShapeError("normalize_fixed: responses " + z.shape().str() + " do not have " +
                     std::to_string(bank.band_count()) + " bands");
  }
  return divnorm::dn_forward(z, fixed_dn_params(bank, config)).y;
}

Tensor contrast_ramp_grating(std::size_t height, std::size_t width, double period,
                             double amp_left, double amp_right) {
  Tensor t({1, 1, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double f = width > 1 ? static_cast<double>(x) / static_cast<double>(width - 1) : 0.0;
      const double a = amp_left + (amp_right - amp_left) * f;
      t.at(0, 0, y, x) =
          0.5 + a * std::sin(2.0 * std::numbers::pi * static_cast<double>(x) / period);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Demo

nlohmann::json DemoReport::to_json() const {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json bands_j = nlohmann::json::array();
  for (const auto& b : bands) {
    bands_j.push_back({{"name", b.name},
                       {"cv_before", opt(b.cv_before)},
                       {"cv_after", opt(b.cv_after)},
                       {"before_range", {b.before_min, b.before_max}},
                       {"after_range", {b.after_min, b.after_max}}});
  }
  nlohmann::json j = {{"height", height},
                      {"width", width},
                      {"tile", tile},
                      {"degenerate", degenerate},
                      {"bands", bands_j},
                      {"patches", scatter.size()}};
  j["dominant_band"] = dominant_band ? nlohmann::json(bands[*dominant_band].name) : nlohmann::json(nullptr);
  return j;
}

DemoReport equalize_image(const Tensor& luminance, const FilterBank& bank,
                          const FixedDnConfig& config, std::size_t tile,
                          const std::filesystem::path* out_dir) {
  config.validate();
  const Shape& s = luminance.shape();
  for (double v : luminance.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ShapeError("equalize: luminance must lie in [0, 1]");
  }
  const Tensor z = analyze(luminance, bank);
  const Tensor y = normalize_fixed(z, bank, config);
  const auto stats = metrics::equalization_stats(z, y, tile);

  DemoReport r;
  r.height = s.h;
  r.width = s.w;
  r.tile = tile;
  double best_energy = 0.0;
  for (std::size_t b = 0; b < bank.band_count(); ++b) {
    BandReport br;
    br.name = bank.band_name(b);
    br.cv_before = stats.cv_before[b];
    br.cv_after = stats.cv_after[b];
    if (out_dir != nullptr) {
      const auto before = image_io::write_pgm(*out_dir / ("band_" + br.name + "_before.pgm"), z, 0, b);
      const auto after = image_io::write_pgm(*out_dir / ("band_" + br.name + "_after.pgm"), y, 0, b);
      br.before_min = before.min;
      br.before_max = before.max;
      br.after_min = after.min;
      br.after_max = after.max;
    } else {
      auto pz = z.plane(0, b);
      auto py = y.plane(0, b);
      br.before_min = *std::min_element(pz.begin(), pz.end());
      br.before_max = *std::max_element(pz.begin(), pz.end());
      br.after_min = *std::min_element(py.begin(), py.end());
      br.after_max = *std::max_element(py.begin(), py.end());
    }
    if (b < bank.bandpass_count()) {
      double e = 0.0;
      for (double v : z.plane(0, b)) e += v * v;
      if (e > best_energy) {
        best_energy = e;
        r.dominant_band = b;
      }
    }
    r.bands.push_back(std::move(br));
  }
  // Flat input: band-pass responses vanish up to rounding.
  r.degenerate = !r.dominant_band || best_energy < 1e-20 * static_cast<double>(s.plane());
  if (r.degenerate) {
    r.dominant_band.reset();
    for (std::size_t b = 0; b < bank.bandpass_count(); ++b) {
      r.bands[b].cv_before.reset();
      r.bands[b].cv_after.reset();
    }
  }

  // Scatter: the dominant band against its orthogonal orientation at the same scale.
  const std::size_t a = r.dominant_band.value_or(0);
  const std::size_t scale = a / bank.orientations;
  const std::size_t ortho =
      scale * bank.orientations + (a % bank.orientations + bank.orientations / 2) % bank.orientations;
  r.scatter_band_a = a;
  r.scatter_band_b = ortho;
  const auto za = metrics::tile_rms(z, a, tile), zb = metrics::tile_rms(z, ortho, tile);
  const auto ya = metrics::tile_rms(y, a, tile), yb = metrics::tile_rms(y, ortho, tile);
  for (std::size_t i = 0; i < za.size(); ++i) r.scatter.push_back({za[i], zb[i], ya[i], yb[i]});

  if (out_dir != nullptr) {
    nlohmann::json patches = nlohmann::json::array();
    const std::size_t cols = s.w / tile;
    for (std::size_t i = 0; i < r.scatter.size(); ++i) {
      const auto& p = r.scatter[i];
      patches.push_back({{"row", i / cols}, {"col", i % cols}, {"before", {p[0], p[1]}},
                         {"after", {p[2], p[3]}}});
    }
    const nlohmann::json scatter = {
        {"bands", {bank.band_name(a), bank.band_name(ortho)}},
        {"statistic", "tile_rms"},
        {"tile", tile},
        {"patches", patches}};
    io::write_text(*out_dir / "scatter.json", scatter.dump(2) + "\n");
    nlohmann::json rep = r.to_json();
    rep["config"] = {{"beta", config.beta}, {"sigma", config.sigma}, {"coupling", config.coupling}};
    rep["scatter_file"] = "scatter.json";
    io::write_text(*out_dir / "report.json", rep.dump(2) + "\n");
  }
  return r;
}

DemoReport demo_equalize(const std::filesystem::path& image_path,
                         const std::filesystem::path& out_dir, const FixedDnConfig& config,
                         std::size_t tile) {
  Tensor img = image_io::read_image(image_path);
  if (img.shape().n != 1) throw ShapeError("equalize: expected a single image");
  if (img.shape().c == 3) {
    img = data::luminance(img);
  } else if (img.shape().c != 1) {
    throw ShapeError("equalize: expected a grayscale or RGB image, got " + img.shape().str());
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw FormatError(FormatError::Kind::kIo, "cannot create " + out_dir.string());
  return equalize_image(img, FilterBank::make(), config, tile, &out_dir);
}

}  // namespace dnseg::bio
