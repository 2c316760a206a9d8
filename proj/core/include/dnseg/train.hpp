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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnseg/data.hpp"
#include "dnseg/tensor.hpp"
#include "dnseg/unet.hpp"

namespace dnseg::train {

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t val_every = 1;
  std::string out_path;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

/// Mean absolute error between raw scores and one-hot targets, averaged over
/// all n*K*h*w elements. The gradient uses sign(0) = 0.
LossResult mae_loss(const Tensor& logits, const data::LabelMap& labels);

/// One bias-corrected Adam update followed by projection of every DN site
/// onto beta >= 1e-6, gamma >= 0. `state` is lazily sized on first use.
void adam_step(unet::Parameters& params, const unet::Parameters& grads, AdamState& state,
               const TrainConfig& config);

struct Example {
  Tensor image;  // (1, 3, H, W)
  data::LabelMap labels;
};

/// Loads every sample of one severity into memory.
std::vector<Example> load_examples(const data::DatasetReader& reader, data::Severity severity,
                                   std::size_t begin = 0,
                                   std::size_t end = static_cast<std::size_t>(-1));

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  std::optional<double> val_miou;

  nlohmann::json to_json() const;
};

struct TrainResult {
  unet::UNetModel best;
  std::vector<EpochRecord> history;
  std::optional<std::size_t> best_epoch;
  std::optional<double> best_val_miou;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Shuffled mini-batch training with validation-IoU model selection. Every
/// `val_every` epochs (and after the last one) mean IoU on `val_set` is
/// measured; the parameters with the best score are returned. Deterministic
/// given config.seed. Throws NumericalError on a non-finite loss.
TrainResult train(const unet::UNetModel& initial, const std::vector<Example>& train_set,
                  const std::vector<Example>& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Mean IoU pooled over a set of examples.
double mean_iou(const unet::UNetModel& model, const std::vector<Example>& set,
                std::size_t batch_size = 16);

}  // namespace dnseg::train
