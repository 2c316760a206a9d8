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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dnseg/error.hpp"
#include "dnseg/gradcheck.hpp"
#include "dnseg/rng.hpp"
#include "dnseg/train.hpp"

namespace dnseg::train {
namespace {

unet::UNetModel tiny_model(unet::DnVariant v, std::uint64_t seed = 0) {
  unet::UNetConfig c;
  c.num_classes = 4;
  c.encoder_channels = {4, 6, 8};
  c.variant = v;
  c.seed = seed;
  return unet::build_model(c);
}

std::vector<Example> scenes(std::size_t n, std::uint64_t base) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = data::generate_scene(base + i, 16, 16, 4);
    out.push_back({std::move(s.image), std::move(s.labels)});
  }
  return out;
}

TEST(MaeLoss, OneHotLogitsGiveZero) {
  data::LabelMap labels(1, 2, 2);
  labels.values = {0, 1, 2, 1};
  Tensor logits({1, 3, 2, 2});
  for (std::size_t p = 0; p < 4; ++p) logits[labels.values[p] * 4 + p] = 1.0;
  const LossResult r = mae_loss(logits, labels);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(max_abs(r.grad), 0.0);
}

TEST(MaeLoss, SinglePixelTwoClasses) {
  data::LabelMap labels(1, 1, 1);
  const LossResult r = mae_loss(Tensor({1, 2, 1, 1}), labels);
  EXPECT_EQ(r.loss, 0.5);
  EXPECT_EQ(r.grad[0], -0.5);
  EXPECT_EQ(r.grad[1], 0.0);
}

TEST(MaeLoss, RejectsOutOfRangeLabel) {
  data::LabelMap labels(1, 1, 1, 2);
  EXPECT_THROW(mae_loss(Tensor({1, 2, 1, 1}), labels), ShapeError);
}

TEST(MaeLoss, FiniteDifferencesAwayFromKink) {
  Rng rng(1);
  data::LabelMap labels(2, 3, 3);
  for (auto& l : labels.values) l = static_cast<std::uint16_t>(rng.index(3));
  Tensor logits({2, 3, 3, 3});
  for (double& v : logits.data()) {
    v = rng.uniform(-0.5, 1.5);
    if (std::fabs(v) < 0.02 || std::fabs(v - 1.0) < 0.02) v += 0.1;
  }
  auto f = [&] { return mae_loss(logits, labels).loss; };
  const LossResult r = mae_loss(logits, labels);
  EXPECT_LT(gradcheck::compare(r.grad.data(), gradcheck::numeric_gradient(logits.data(), f, 1e-6))
                .max_rel_error,
            1e-6);
  EXPECT_GE(r.loss, 0.0);
}

TEST(Adam, FirstStepWithUnitGradient) {
  auto m = tiny_model(unet::DnVariant::kNone);
  const auto before = m.params;
  auto g = m.params.zeros_like();
  for (auto& v : g.views()) std::fill(v.values.begin(), v.values.end(), 1.0);
  AdamState state;
  TrainConfig cfg;
  adam_step(m.params, g, state, cfg);
  EXPECT_EQ(state.t, 1u);
  const auto a = before.views();
  const auto b = m.params.views();
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].values.size(); ++i) {
      EXPECT_NEAR(b[k].values[i] - a[k].values[i], -0.0009999999900000003, 1e-15);
    }
  }
}

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  auto m = tiny_model(unet::DnVariant::kDn4);
  const auto before = unet::serialize_model(m);
  const auto g = m.params.zeros_like();
  AdamState state;
  TrainConfig cfg;
  for (int i = 0; i < 5; ++i) adam_step(m.params, g, state, cfg);
  EXPECT_EQ(unet::serialize_model(m), before);
}

TEST(Adam, ProjectsDnParameters) {
  auto m = tiny_model(unet::DnVariant::kDn1);
  auto& dn = *m.params.dn[0];
  dn.gamma[0] = 0.5;
  dn.beta[0] = 0.5;
  auto g = m.params.zeros_like();
  g.dn[0]->gamma[0] = 1.0;
  g.dn[0]->beta[0] = 1.0;
  AdamState state;
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  adam_step(m.params, g, state, cfg);
  EXPECT_EQ(m.params.dn[0]->gamma[0], 0.0);
  EXPECT_EQ(m.params.dn[0]->beta[0], divnorm::kBetaMin);
  EXPECT_TRUE(m.params.dn_constraints_hold());
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
  const auto m = tiny_model(unet::DnVariant::kDn1);
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = train(m, scenes(2, 0), scenes(1, 100), cfg);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(unet::serialize_model(r.best), unet::serialize_model(m));
}

TEST(Train, RejectsBadConfig) {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, DeterministicGivenSeed) {
  const auto m = tiny_model(unet::DnVariant::kDn4, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 3;
  cfg.seed = 9;
  const auto tr = scenes(6, 0);
  const auto va = scenes(2, 100);
  const TrainResult a = train(m, tr, va, cfg);
  const TrainResult b = train(m, tr, va, cfg);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].to_json(), b.history[i].to_json());
  }
  EXPECT_EQ(unet::serialize_model(a.best), unet::serialize_model(b.best));
}

TEST(Train, TinyRunReducesLossAndKeepsBest) {
  const auto m = tiny_model(unet::DnVariant::kDn4, 1);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 4;
  cfg.val_every = 5;
  std::vector<EpochRecord> seen;
  const TrainResult r =
      train(m, scenes(8, 0), scenes(2, 100), cfg, [&](const EpochRecord& e) { seen.push_back(e); });
  ASSERT_EQ(r.history.size(), 30u);
  EXPECT_EQ(seen.size(), 30u);
  EXPECT_LT(r.history.back().loss, r.history.front().loss);
  double best = -1.0;
  std::size_t validations = 0;
  for (const auto& e : r.history) {
    if (e.val_miou) {
      best = std::max(best, *e.val_miou);
      ++validations;
    }
  }
  EXPECT_EQ(validations, 6u);
  ASSERT_TRUE(r.best_val_miou.has_value());
  EXPECT_EQ(*r.best_val_miou, best);
  EXPECT_TRUE(r.best.params.dn_constraints_hold());
  EXPECT_EQ(mean_iou(r.best, scenes(2, 100)), best);
}

TEST(Train, HistoryJson) {
  EpochRecord e{3, 0.25, std::nullopt};
  EXPECT_EQ(e.to_json().dump(), R"({"epoch":3,"loss":0.25,"val_miou":null})");
}

}  // namespace
}  // namespace dnseg::train
