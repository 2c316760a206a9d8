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

#include "dnseg/train.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>

#include "dnseg/error.hpp"
#include "dnseg/metrics.hpp"
#include "dnseg/rng.hpp"

namespace dnseg::train {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train: learning_rate must be > 0");
  }
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (val_every < 1) throw ConfigError("train: val_every must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("train: Adam moment decay rates must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam eps must be > 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2}, {"adam_eps", c.adam_eps},
          {"seed", c.seed},             {"val_every", c.val_every},
          {"out_path", c.out_path}};
}

LossResult mae_loss(const Tensor& logits, const data::LabelMap& labels) {
  const Shape& s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
    throw ShapeError("mae_loss: logits " + s.str() + " and labels (" + std::to_string(labels.n) +
                     "," + std::to_string(labels.h) + "," + std::to_string(labels.w) +
                     ") differ in shape");
  }
  for (std::uint16_t l : labels.values) {
    if (l >= s.c) {
      throw ShapeError("mae_loss: label " + std::to_string(l) + " >= K = " + std::to_string(s.c));
    }
  }
  const double inv = 1.0 / static_cast<double>(s.numel());
  LossResult r{0.0, Tensor(s)};
  double sum = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* lp = logits.plane(n, c).data();
      double* gp = r.grad.plane(n, c).data();
      const std::uint16_t* lab = labels.values.data() + n * s.plane();
      for (std::size_t p = 0; p < s.plane(); ++p) {
        const double target = lab[p] == c ? 1.0 : 0.0;
        const double d = lp[p] - target;
        sum += std::fabs(d);
        gp[p] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
      }
    }
  }
  r.loss = sum * inv;
  return r;
}

void adam_step(unet::Parameters& params, const unet::Parameters& grads, AdamState& state,
               const TrainConfig& config) {
  auto pv = params.views();
  const auto gv = grads.views();
  if (pv.size() != gv.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& p : pv) {
      state.m.emplace_back(p.values.size(), 0.0);
      state.v.emplace_back(p.values.size(), 0.0);
    }
  }
  if (state.m.size() != pv.size()) throw ShapeError("adam_step: optimizer state mismatch");
  ++state.t;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < pv.size(); ++k) {
    auto p = pv[k].values;
    auto g = gv[k].values;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (p.size() != g.size() || m.size() != p.size()) {
      throw ShapeError("adam_step: shape mismatch for " + pv[k].name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
    }
  }
  params.project_dn();
  assert(params.dn_constraints_hold());
}

std::vector<Example> load_examples(const data::DatasetReader& reader, data::Severity severity,
                                   std::size_t begin, std::size_t end) {
  end = std::min(end, reader.size());
  std::vector<Example> out;
  for (std::size_t i = begin; i < end; ++i) {
    data::Record r = reader.read(i, severity);
    out.push_back({std::move(r.image), std::move(r.labels)});
  }
  return out;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"loss", loss},
          {"val_miou", val_miou ? nlohmann::json(*val_miou) : nlohmann::json(nullptr)}};
}

namespace {

struct Batch {
  Tensor images;
  data::LabelMap labels;
};

Batch make_batch(const std::vector<Example>& set, std::span<const std::size_t> idx) {
  std::vector<const Tensor*> imgs;
  std::vector<const data::LabelMap*> labs;
  for (std::size_t i : idx) {
    imgs.push_back(&set[i].image);
    labs.push_back(&set[i].labels);
  }
  return {data::stack(imgs), data::stack(labs)};
}

}  // namespace

double mean_iou(const unet::UNetModel& model, const std::vector<Example>& set,
                std::size_t batch_size) {
  metrics::IouAccumulator acc(model.config.num_classes);
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < set.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, set.size() - i);
    const Batch b = make_batch(set, std::span<const std::size_t>(idx).subspan(i, n));
    acc.add(metrics::argmax_labels(unet::model_forward(model, b.images).logits), b.labels);
  }
  return acc.result().mean;
}

TrainResult train(const unet::UNetModel& initial, const std::vector<Example>& train_set,
                  const std::vector<Example>& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result{initial, {}, std::nullopt, std::nullopt};
  if (config.epochs == 0) return result;
  if (train_set.empty()) throw ConfigError("train: empty training set");
  if (val_set.empty()) throw ConfigError("train: empty validation set");

  unet::UNetModel model = initial;
  AdamState adam;
  Rng shuffle = Rng::substream(config.seed, "shuffle");
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);

    double loss_sum = 0.0;
    for (std::size_t i = 0; i < order.size(); i += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - i);
      const Batch b = make_batch(train_set, std::span<const std::size_t>(order).subspan(i, n));
      auto fwd = unet::model_forward(model, b.images);
      const LossResult loss = mae_loss(fwd.logits, b.labels);
      if (!std::isfinite(loss.loss)) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss.loss * static_cast<double>(n);
      const unet::Parameters grads = unet::model_backward(model, fwd.cache, loss.grad);
      adam_step(model.params, grads, adam, config);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(train_set.size());
    if (!std::isfinite(rec.loss)) {
      throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
    }
    if (epoch % config.val_every == 0 || epoch == config.epochs) {
      rec.val_miou = mean_iou(model, val_set, config.batch_size);
      if (!result.best_val_miou || *rec.val_miou > *result.best_val_miou) {
        result.best_val_miou = rec.val_miou;
        result.best_epoch = epoch;
        result.best = model;
      }
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace dnseg::train
