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
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnseg/tensor.hpp"

namespace dnseg::data {

/// Integer class map of shape (n, h, w), row-major.
struct LabelMap {
  std::size_t n = 1;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint16_t> values;

  LabelMap() = default;
  LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::uint16_t fill = 0)
      : n(n_), h(h_), w(w_), values(n_ * h_ * w_, fill) {}

  std::uint16_t& at(std::size_t i, std::size_t y, std::size_t x) { return values[(i * h + y) * w + x]; }
  std::uint16_t at(std::size_t i, std::size_t y, std::size_t x) const {
    return values[(i * h + y) * w + x];
  }
  bool contains(std::uint16_t label) const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Stacks single-image label maps into one batch.
LabelMap stack(const std::vector<const LabelMap*>& maps);
/// Stacks (1, c, h, w) tensors into (n, c, h, w).
Tensor stack(const std::vector<const Tensor*>& images);

enum class Severity { kNone, kLow, kMid, kHigh };

inline constexpr std::array<Severity, 4> kAllSeverities = {Severity::kNone, Severity::kLow,
                                                           Severity::kMid, Severity::kHigh};

std::string_view to_string(Severity s);
Severity parse_severity(std::string_view s);

/// Homogeneous fog: I = J t + A (1 - t), t = exp(-attenuation * depth).
struct FogParams {
  Severity severity = Severity::kNone;
  double attenuation = 0.0;  // per unit depth
  std::array<double, 3> airlight{0.9, 0.9, 0.92};

  /// none 0, low 0.5, mid 1.0, high 2.0.
  static FogParams preset(Severity s);
  void validate() const;
};

struct SceneSample {
  Tensor image;     // (1, 3, H, W), values in [0, 1]
  LabelMap labels;  // (1, H, W), values in [0, K)
  Tensor depth;     // (1, 1, H, W), positive scene units
};

struct SceneOptions {
  std::size_t min_objects = 3;
  std::size_t max_objects = 8;
  // Forces the number of objects (0 gives an empty ground plane).
  std::optional<std::size_t> object_count;
};

/// Class names used in manifests: background, then shape names cycling
/// through rectangle, ellipse, triangle.
std::vector<std::string> class_names(std::size_t num_classes);

/// Synthetic street-like scene: a textured ground plane receding in depth
/// toward the top of the frame, a smooth illumination gradient, and 3-8
/// objects. An object's class fixes its shape and the orientation of its
/// texture; its colour is random. Labels come from the front-most object.
/// Requires H, W divisible by 8 and K >= 3.
SceneSample generate_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                           std::size_t num_classes, const SceneOptions& options = {});

/// exp(-attenuation * depth) per pixel.
Tensor transmittance(const Tensor& depth, double attenuation);
/// Renders fog over an image given its depth; output clamped to [0, 1].
Tensor apply_fog(const Tensor& image, const Tensor& depth, const FogParams& fog);
Tensor apply_fog(const SceneSample& sample, const FogParams& fog);

/// Rec. 601 luma of an (n, 3, h, w) tensor, as (n, 1, h, w).
Tensor luminance(const Tensor& rgb);
/// Standard deviation of luminance.
double rms_contrast(const Tensor& rgb);

// ---------------------------------------------------------------------------
// Dataset directory
//
//   manifest.json
//   img_<id>_<severity>.f64   (1, 3, H, W) float64
//   lab_<id>.u16              (1, 1, H, W) uint16
//   dep_<id>.f64              (1, 1, H, W) float64
//
// Every blob starts with an 8-byte magic, a u32 rank and rank u64 extents,
// followed by little-endian row-major data. The manifest records a CRC-32
// for each blob.

struct ManifestSample {
  std::size_t id = 0;
  std::string image;  // pattern containing "<sev>"
  std::string labels;
  std::string depth;
  std::vector<Severity> severities;
  std::map<std::string, std::uint32_t> checksums;

  std::string image_file(Severity s) const;
};

struct Manifest {
  int version = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> classes;
  std::map<std::string, double> fog_attenuation;
  std::vector<ManifestSample> samples;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

/// Streams samples to disk one at a time; the manifest is written by finish().
class DatasetWriter {
 public:
  DatasetWriter(std::filesystem::path dir, std::size_t height, std::size_t width,
                std::size_t num_classes, std::vector<FogParams> fog_variants);

  void add(std::size_t id, const SceneSample& sample);
  const Manifest& finish();

 private:
  std::filesystem::path dir_;
  std::vector<FogParams> fog_;
  Manifest manifest_;
  bool finished_ = false;
};

Manifest write_dataset(const std::vector<SceneSample>& samples,
                       const std::vector<FogParams>& fog_variants,
                       const std::filesystem::path& dir);

struct Record {
  std::size_t id = 0;
  Severity severity = Severity::kNone;
  Tensor image;
  LabelMap labels;
};

/// Reads a dataset directory lazily; nothing but the manifest is held in
/// memory. next() walks samples in manifest order and, within a sample, its
/// severities in manifest order.
class DatasetReader {
 public:
  explicit DatasetReader(std::filesystem::path dir);

  const Manifest& manifest() const noexcept { return manifest_; }
  std::size_t size() const noexcept { return manifest_.samples.size(); }

  Record read(std::size_t index, Severity severity) const;
  Tensor read_depth(std::size_t index) const;

  std::optional<Record> next();
  void rewind() noexcept { cursor_ = 0; }

 private:
  std::filesystem::path dir_;
  Manifest manifest_;
  std::size_t cursor_ = 0;
};

inline DatasetReader read_dataset(const std::filesystem::path& dir) { return DatasetReader(dir); }

// Single-blob helpers, exposed for tools that consume dataset images.
void write_f64_blob(const std::filesystem::path& path, const Tensor& t);
Tensor read_f64_blob(const std::filesystem::path& path);

}  // namespace dnseg::data
