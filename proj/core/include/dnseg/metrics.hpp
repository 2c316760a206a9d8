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

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnseg/data.hpp"
#include "dnseg/tensor.hpp"
#include "dnseg/unet.hpp"

namespace dnseg::metrics {

struct IouResult {
  // Absent for classes that appear in neither prediction nor ground truth.
  std::vector<std::optional<double>> per_class;
  // Mean over present classes; 0 if no class is present.
  double mean = 0.0;
};

/// Pooled intersection / union counts; adding maps one at a time gives the
/// same result as scoring their concatenation.
class IouAccumulator {
 public:
  explicit IouAccumulator(std::size_t num_classes);

  void add(const data::LabelMap& pred, const data::LabelMap& gt);
  void merge(const IouAccumulator& other);
  IouResult result() const;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> inter_;
  std::vector<std::uint64_t> uni_;
};

IouResult iou(const data::LabelMap& pred, const data::LabelMap& gt, std::size_t num_classes);

/// Per-pixel argmax over channels; ties go to the lowest class index.
data::LabelMap argmax_labels(const Tensor& logits);

/// (a - b) / b.
double relative_change(double a, double b);

struct SeverityResult {
  data::Severity severity;
  std::vector<std::optional<double>> per_class;
  double mean_iou = 0.0;
};

/// Scores of one model across fog severities.
struct EvalReport {
  std::string variant;
  std::size_t num_samples = 0;
  std::vector<SeverityResult> severities;

  const SeverityResult* find(data::Severity s) const;
  /// Relative IoU reduction of each foggy severity versus the clean one.
  std::vector<std::pair<data::Severity, double>> reductions() const;
  nlohmann::json to_json() const;
};

/// Runs inference on every sample of the dataset for each severity and
/// pools IoU over the full set. `threads` > 1 splits samples across workers;
/// the integer confusion counts make the result independent of scheduling.
EvalReport evaluate(const unet::UNetModel& model, const data::DatasetReader& dataset,
                    const std::vector<data::Severity>& severities, std::size_t batch_size = 16,
                    std::size_t threads = 1);

/// Two-panel comparison across variants: absolute mean IoU per severity
/// with improvement versus the "none" variant, and reductions versus clean.
struct ComparisonTable {
  std::vector<std::string> variants;
  std::vector<data::Severity> severities;
  // iou[severity][variant]
  std::vector<std::vector<double>> iou;

  static ComparisonTable from_reports(const std::vector<EvalReport>& reports);
  std::optional<double> improvement(std::size_t severity_row, std::size_t variant_col) const;
  std::vector<std::vector<double>> reductions() const;  // rows: foggy severities
  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Spatial equalization of feature maps: per channel, tile the maps, take the
/// RMS of each tile, and report the coefficient of variation (population std
/// over mean) across tiles. Absent when the mean tile RMS is zero.
struct EqualizationStats {
  std::vector<std::optional<double>> cv_before;
  std::vector<std::optional<double>> cv_after;
};

std::vector<double> tile_rms(const Tensor& maps, std::size_t channel, std::size_t tile);
std::optional<double> coefficient_of_variation(const std::vector<double>& values);
EqualizationStats equalization_stats(const Tensor& before, const Tensor& after, std::size_t tile = 8);

}  // namespace dnseg::metrics
