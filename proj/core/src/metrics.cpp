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

#include "dnseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include "dnseg/error.hpp"

namespace dnseg::metrics {

IouAccumulator::IouAccumulator(std::size_t num_classes)
    : k_(num_classes), inter_(num_classes, 0), uni_(num_classes, 0) {}

void IouAccumulator::add(const data::LabelMap& pred, const data::LabelMap& gt) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w) {
    throw ShapeError("iou: prediction (" + std::to_string(pred.n) + "," + std::to_string(pred.h) +
                     "," + std::to_string(pred.w) + ") and ground truth (" +
                     std::to_string(gt.n) + "," + std::to_string(gt.h) + "," +
                     std::to_string(gt.w) + ") differ in shape");
  }
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const std::size_t p = pred.values[i], g = gt.values[i];
    if (p >= k_ || g >= k_) throw ShapeError("iou: label out of range");
    if (p == g) {
      ++inter_[p];
      ++uni_[p];
    } else {
      ++uni_[p];
      ++uni_[g];
    }
  }
}

void IouAccumulator::merge(const IouAccumulator& other) {
  if (other.k_ != k_) throw ShapeError("iou: merging accumulators with different K");
  for (std::size_t c = 0; c < k_; ++c) {
    inter_[c] += other.inter_[c];
    uni_[c] += other.uni_[c];
  }
}

IouResult IouAccumulator::result() const {
  IouResult r;
  r.per_class.resize(k_);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k_; ++c) {
    if (uni_[c] == 0) continue;
    const double v = static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]);
    r.per_class[c] = v;
    sum += v;
    ++present;
  }
  r.mean = present ? sum / static_cast<double>(present) : 0.0;
  return r;
}

IouResult iou(const data::LabelMap& pred, const data::LabelMap& gt, std::size_t num_classes) {
  IouAccumulator acc(num_classes);
  acc.add(pred, gt);
  return acc.result();
}

data::LabelMap argmax_labels(const Tensor& logits) {
  const Shape& s = logits.shape();
  data::LabelMap out(s.n, s.h, s.w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < s.plane(); ++p) {
      std::size_t best = 0;
      double bv = logits[logits.offset(n, 0, 0, 0) + p];
      for (std::size_t c = 1; c < s.c; ++c) {
        const double v = logits[logits.offset(n, c, 0, 0) + p];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out.values[n * s.plane() + p] = static_cast<std::uint16_t>(best);
    }
  }
  return out;
}

double relative_change(double a, double b) { return (a - b) / b; }

// ---------------------------------------------------------------------------
// Evaluation

const SeverityResult* EvalReport::find(data::Severity s) const {
  for (const auto& r : severities) {
    if (r.severity == s) return &r;
  }
  return nullptr;
}

std::vector<std::pair<data::Severity, double>> EvalReport::reductions() const {
  std::vector<std::pair<data::Severity, double>> out;
  const SeverityResult* clean = find(data::Severity::kNone);
  if (clean == nullptr) return out;
  for (const auto& r : severities) {
    if (r.severity == data::Severity::kNone) continue;
    out.emplace_back(r.severity, relative_change(r.mean_iou, clean->mean_iou));
  }
  return out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json sev = nlohmann::json::array();
  for (const auto& r : severities) {
    nlohmann::json pc = nlohmann::json::array();
    for (const auto& v : r.per_class) pc.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    sev.push_back({{"severity", data::to_string(r.severity)}, {"mean_iou", r.mean_iou},
                   {"per_class_iou", pc}});
  }
  nlohmann::json red = nlohmann::json::array();
  for (const auto& [s, v] : reductions()) {
    red.push_back({{"severity", data::to_string(s)}, {"relative_change", v}});
  }
  return {{"variant", variant},
          {"num_samples", num_samples},
          {"severities", sev},
          {"reductions_vs_clean", red}};
}

namespace {

void evaluate_range(const unet::UNetModel& model, const data::DatasetReader& dataset,
                    data::Severity severity, std::size_t begin, std::size_t end,
                    std::size_t batch_size, IouAccumulator& acc) {
  for (std::size_t i = begin; i < end; i += batch_size) {
    const std::size_t stop = std::min(end, i + batch_size);
    std::vector<data::Record> recs;
    for (std::size_t k = i; k < stop; ++k) recs.push_back(dataset.read(k, severity));
    std::vector<const Tensor*> imgs;
    std::vector<const data::LabelMap*> labs;
    for (const auto& r : recs) {
      imgs.push_back(&r.image);
      labs.push_back(&r.labels);
    }
    const auto fwd = unet::model_forward(model, data::stack(imgs));
    acc.add(argmax_labels(fwd.logits), data::stack(labs));
  }
}

}  // namespace

EvalReport evaluate(const unet::UNetModel& model, const data::DatasetReader& dataset,
                    const std::vector<data::Severity>& severities, std::size_t batch_size,
                    std::size_t threads) {
  if (dataset.size() == 0) throw ConfigError("evaluate: empty dataset");
  if (severities.empty()) throw ConfigError("evaluate: no severities requested");
  if (dataset.manifest().num_classes != model.config.num_classes) {
    throw ShapeError("evaluate: dataset has " + std::to_string(dataset.manifest().num_classes) +
                     " classes, model predicts " + std::to_string(model.config.num_classes));
  }
  batch_size = std::max<std::size_t>(batch_size, 1);
  threads = std::clamp<std::size_t>(threads, 1, dataset.size());
  const std::size_t K = model.config.num_classes;

  EvalReport report;
  report.variant = std::string(unet::to_string(model.config.variant));
  report.num_samples = dataset.size();
  for (data::Severity sev : severities) {
    std::vector<IouAccumulator> parts(threads, IouAccumulator(K));
    const std::size_t chunk = (dataset.size() + threads - 1) / threads;
    if (threads == 1) {
      evaluate_range(model, dataset, sev, 0, dataset.size(), batch_size, parts[0]);
    } else {
      std::vector<std::jthread> workers;
      for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t b = t * chunk, e = std::min(dataset.size(), b + chunk);
        if (b >= e) continue;
        workers.emplace_back([&, t, b, e] {
          evaluate_range(model, dataset, sev, b, e, batch_size, parts[t]);
        });
      }
    }
    IouAccumulator total(K);
    for (const auto& p : parts) total.merge(p);
    const IouResult r = total.result();
    report.severities.push_back({sev, r.per_class, r.mean});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Comparison table

ComparisonTable ComparisonTable::from_reports(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ConfigError("comparison: no reports");
  ComparisonTable t;
  for (const auto& r : reports) t.variants.push_back(r.variant);
  for (const auto& s : reports.front().severities) t.severities.push_back(s.severity);
  for (data::Severity sev : t.severities) {
    std::vector<double> row;
    for (const auto& r : reports) {
      const SeverityResult* sr = r.find(sev);
      if (sr == nullptr) {
        throw ConfigError("comparison: report '" + r.variant + "' lacks severity " +
                          std::string(data::to_string(sev)));
      }
      row.push_back(sr->mean_iou);
    }
    t.iou.push_back(std::move(row));
  }
  return t;
}

std::optional<double> ComparisonTable::improvement(std::size_t row, std::size_t col) const {
  const auto it = std::find(variants.begin(), variants.end(), "none");
  if (it == variants.end()) return std::nullopt;
  const auto base = static_cast<std::size_t>(it - variants.begin());
  if (base == col) return std::nullopt;
  return relative_change(iou[row][col], iou[row][base]);
}

std::vector<std::vector<double>> ComparisonTable::reductions() const {
  std::vector<std::vector<double>> out;
  const auto clean = std::find(severities.begin(), severities.end(), data::Severity::kNone);
  if (clean == severities.end()) return out;
  const auto c = static_cast<std::size_t>(clean - severities.begin());
  for (std::size_t r = 0; r < severities.size(); ++r) {
    if (r == c) continue;
    std::vector<double> row;
    for (std::size_t v = 0; v < variants.size(); ++v) row.push_back(relative_change(iou[r][v], iou[c][v]));
    out.push_back(std::move(row));
  }
  return out;
}

nlohmann::json ComparisonTable::to_json() const {
  nlohmann::json abs = nlohmann::json::array();
  for (std::size_t r = 0; r < severities.size(); ++r) {
    nlohmann::json cells = nlohmann::json::object();
    for (std::size_t v = 0; v < variants.size(); ++v) {
      nlohmann::json cell = {{"mean_iou", iou[r][v]}};
      if (auto imp = improvement(r, v)) cell["improvement_vs_none"] = *imp;
      cells[variants[v]] = cell;
    }
    abs.push_back({{"severity", data::to_string(severities[r])}, {"variants", cells}});
  }
  nlohmann::json red = nlohmann::json::array();
  const auto reds = reductions();
  std::size_t k = 0;
  for (std::size_t r = 0; r < severities.size(); ++r) {
    if (severities[r] == data::Severity::kNone) continue;
    nlohmann::json cells = nlohmann::json::object();
    for (std::size_t v = 0; v < variants.size(); ++v) cells[variants[v]] = reds[k][v];
    red.push_back({{"change", "none-" + std::string(data::to_string(severities[r]))},
                   {"variants", cells}});
    ++k;
  }
  return {{"iou", abs}, {"reductions", red}};
}

std::string ComparisonTable::to_text() const {
  std::ostringstream os;
  os << std::fixed;
  auto pct = [](double v) {
    std::ostringstream p;
    p << std::fixed << std::setprecision(1) << 100.0 * v << "%";
    return p.str();
  };
  os << std::left << std::setw(14) << "Dataset";
  for (const auto& v : variants) os << " | " << std::setw(18) << v;
  os << "\n";
  for (std::size_t r = 0; r < severities.size(); ++r) {
    os << std::setw(14) << data::to_string(severities[r]);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(3) << iou[r][v];
      if (auto imp = improvement(r, v)) cell << " (" << pct(*imp) << ")";
      os << " | " << std::setw(18) << cell.str();
    }
    os << "\n";
  }
  os << "\nIoU reductions (due to fog)\n";
  os << std::setw(14) << "Change";
  for (const auto& v : variants) os << " | " << std::setw(18) << v;
  os << "\n";
  const auto reds = reductions();
  std::size_t k = 0;
  for (std::size_t r = 0; r < severities.size(); ++r) {
    if (severities[r] == data::Severity::kNone) continue;
    os << std::setw(14) << ("none-" + std::string(data::to_string(severities[r])));
    for (std::size_t v = 0; v < variants.size(); ++v) os << " | " << std::setw(18) << pct(reds[k][v]);
    os << "\n";
    ++k;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Equalization

std::vector<double> tile_rms(const Tensor& maps, std::size_t channel, std::size_t tile) {
  const Shape& s = maps.shape();
  if (tile == 0 || s.h % tile != 0 || s.w % tile != 0) {
    throw ShapeError("equalization: tile " + std::to_string(tile) + " must divide " + s.str());
  }
  std::vector<double> out;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t ty = 0; ty < s.h; ty += tile) {
      for (std::size_t tx = 0; tx < s.w; tx += tile) {
        double sq = 0.0;
        for (std::size_t y = ty; y < ty + tile; ++y) {
          for (std::size_t x = tx; x < tx + tile; ++x) {
            const double v = maps.at(n, channel, y, x);
            sq += v * v;
          }
        }
        out.push_back(std::sqrt(sq / static_cast<double>(tile * tile)));
      }
    }
  }
  return out;
}

std::optional<double> coefficient_of_variation(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (mean == 0.0) return std::nullopt;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(values.size())) / mean;
}

EqualizationStats equalization_stats(const Tensor& before, const Tensor& after, std::size_t tile) {
  require_same_shape(before.shape(), after.shape(), "equalization_stats");
  EqualizationStats st;
  for (std::size_t c = 0; c < before.shape().c; ++c) {
    st.cv_before.push_back(coefficient_of_variation(tile_rms(before, c, tile)));
    st.cv_after.push_back(coefficient_of_variation(tile_rms(after, c, tile)));
  }
  return st;
}

}  // namespace dnseg::metrics
