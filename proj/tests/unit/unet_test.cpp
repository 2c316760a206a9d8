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

#include "dnseg/binary_io.hpp"
#include "dnseg/error.hpp"
#include "dnseg/gradcheck.hpp"
#include "dnseg/rng.hpp"
#include "dnseg/unet.hpp"
#include "test_util.hpp"

namespace dnseg::unet {
namespace {

using testing::dot;
using testing::TempDir;

UNetConfig small_config(DnVariant v, std::uint64_t seed = 1) {
  UNetConfig c;
  c.num_classes = 3;
  c.encoder_channels = {2, 3, 4};
  c.variant = v;
  c.seed = seed;
  return c;
}

Tensor random_image(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(s);
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

FormatError::Kind load_error(std::span<const std::uint8_t> bytes,
                             std::optional<DnVariant> expected = std::nullopt) {
  try {
    deserialize_model(bytes, expected);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no FormatError";
  return FormatError::Kind::kIo;
}

TEST(Variant, ParseAndSites) {
  EXPECT_EQ(parse_variant("dn4"), DnVariant::kDn4);
  EXPECT_EQ(to_string(DnVariant::kDn1), "dn1");
  EXPECT_THROW(parse_variant("dn2"), ConfigError);
  EXPECT_TRUE(has_site(DnVariant::kDn1, 1));
  EXPECT_FALSE(has_site(DnVariant::kDn1, 2));
  EXPECT_TRUE(has_site(DnVariant::kDn4, 4));
  EXPECT_FALSE(has_site(DnVariant::kNone, 1));
}

TEST(BuildModel, DefaultParameterCounts) {
  UNetConfig c;
  c.num_classes = 4;
  c.variant = DnVariant::kNone;
  EXPECT_EQ(build_model(c).parameter_count(), 111332u);
  c.variant = DnVariant::kDn1;
  EXPECT_EQ(build_model(c).parameter_count(), 111560u);
  c.variant = DnVariant::kDn4;
  EXPECT_EQ(build_model(c).parameter_count(), 246072u);
}

TEST(BuildModel, DnSiteCountsAndDifference) {
  const auto none = build_model(small_config(DnVariant::kNone));
  const auto dn1 = build_model(small_config(DnVariant::kDn1));
  const auto dn4 = build_model(small_config(DnVariant::kDn4));
  EXPECT_EQ(none.params.dn_site_count(), 0u);
  EXPECT_EQ(dn1.params.dn_site_count(), 1u);
  EXPECT_EQ(dn4.params.dn_site_count(), 4u);
  std::size_t dn_total = 0;
  for (std::size_t c : {3u, 2u, 3u, 4u}) dn_total += c + c * c * 25;
  EXPECT_EQ(dn4.parameter_count() - none.parameter_count(), dn_total);
  EXPECT_EQ(dn1.parameter_count() - none.parameter_count(), 3u + 9u * 25u);
}

TEST(BuildModel, CountMatchesEnumeration) {
  auto m = build_model(small_config(DnVariant::kDn4));
  std::size_t n = 0;
  for (const auto& v : m.params.views()) {
    std::size_t prod = 1;
    for (std::size_t d : v.shape) prod *= d;
    EXPECT_EQ(prod, v.values.size()) << v.name;
    n += v.values.size();
  }
  EXPECT_EQ(n, m.parameter_count());
}

TEST(BuildModel, DeterministicAndVariantIndependentConvs) {
  const auto a = build_model(small_config(DnVariant::kDn1, 5));
  const auto b = build_model(small_config(DnVariant::kDn1, 5));
  EXPECT_EQ(serialize_model(a), serialize_model(b));
  const auto none = build_model(small_config(DnVariant::kNone, 5));
  ASSERT_EQ(none.params.convs.size(), a.params.convs.size());
  for (std::size_t i = 0; i < none.params.convs.size(); ++i) {
    EXPECT_EQ(none.params.convs[i].weights, a.params.convs[i].weights);
  }
  ASSERT_TRUE(a.params.dn[0].has_value());
  EXPECT_EQ(a.params.dn[0]->channels(), 3u);
  const auto other = build_model(small_config(DnVariant::kDn1, 6));
  EXPECT_NE(serialize_model(a), serialize_model(other));
}

TEST(BuildModel, GlorotBounds) {
  const auto m = build_model(small_config(DnVariant::kNone));
  for (const auto& layer : m.params.convs) {
    const auto& s = layer.spec;
    const double fan = static_cast<double>((s.in_channels + s.out_channels) * s.kernel_h * s.kernel_w);
    const double limit = std::sqrt(6.0 / fan);
    EXPECT_LE(max_abs(layer.weights), limit) << layer.name;
    EXPECT_EQ(s.padding, Padding::kReflect);
  }
}

TEST(BuildModel, RejectsBadConfig) {
  UNetConfig c = small_config(DnVariant::kNone);
  c.num_classes = 1;
  EXPECT_THROW(build_model(c), ConfigError);
  c = small_config(DnVariant::kDn4);
  c.dn_window = 4;
  EXPECT_THROW(build_model(c), ConfigError);
}

TEST(Forward, OutputShape) {
  UNetConfig c = small_config(DnVariant::kDn4);
  c.num_classes = 5;
  const auto m = build_model(c);
  const auto r = model_forward(m, random_image({4, 3, 32, 64}, 1));
  EXPECT_EQ(r.logits.shape(), (Shape{4, 5, 32, 64}));
}

TEST(Forward, RejectsIndivisibleDims) {
  const auto m = build_model(small_config(DnVariant::kNone));
  try {
    model_forward(m, Tensor({1, 3, 12, 16}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find('8'), std::string::npos) << e.what();
  }
}

TEST(Forward, ZeroImageGivesSpatiallyConstantLogits) {
  const auto m = build_model(small_config(DnVariant::kNone));
  const Tensor logits = model_forward(m, Tensor({1, 3, 16, 16})).logits;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto plane = logits.plane(0, k);
    for (double v : plane) EXPECT_EQ(v, plane[0]);
  }
}

TEST(Forward, IdentityDnMatchesPlainNetworkBitExact) {
  const auto none = build_model(small_config(DnVariant::kNone, 3));
  auto dn4 = build_model(small_config(DnVariant::kDn4, 3));
  for (int s = 1; s <= 4; ++s) {
    dn4.params.dn[s - 1] = divnorm::DnParams::identity(dn4.params.dn[s - 1]->channels());
  }
  dn4.params.convs = none.params.convs;
  const Tensor x = random_image({2, 3, 16, 24}, 9);
  EXPECT_EQ(model_forward(dn4, x).logits, model_forward(none, x).logits);
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
  const auto m = build_model(small_config(DnVariant::kDn4));
  const auto f = model_forward(m, random_image({1, 3, 8, 8}, 2));
  const Parameters g = model_backward(m, f.cache, Tensor(f.logits.shape()));
  for (const auto& v : g.views()) {
    for (double x : v.values) EXPECT_EQ(x, 0.0) << v.name;
  }
}

TEST(Backward, ZeroingSiteGradientZeroesItsBeta) {
  const auto m = build_model(small_config(DnVariant::kDn4));
  const auto f = model_forward(m, random_image({1, 3, 8, 8}, 3));
  const Tensor r = random_image(f.logits.shape(), 4);
  for (int site = 1; site <= 4; ++site) {
    const Parameters g = model_backward(m, f.cache, r, {site});
    for (double b : g.dn[site - 1]->beta) EXPECT_EQ(b, 0.0);
    for (double b : g.dn[site - 1]->gamma.data()) EXPECT_EQ(b, 0.0);
  }
  const Parameters full = model_backward(m, f.cache, r);
  EXPECT_NE(full.dn[1]->beta[0], 0.0);
}

TEST(Backward, TinyModelFiniteDifferences) {
  auto m = build_model(small_config(DnVariant::kDn4, 11));
  const Tensor x = random_image({1, 3, 8, 8}, 12);
  const Tensor r = scaled(random_image({1, 3, 8, 8}, 13), 2.0);
  auto f = [&] { return dot(r, model_forward(m, x).logits); };
  const auto fw = model_forward(m, x);
  Parameters g = model_backward(m, fw.cache, r);
  auto pv = m.params.views();
  auto gv = g.views();
  for (std::size_t k = 0; k < pv.size(); ++k) {
    const auto num = gradcheck::numeric_gradient(pv[k].values, f, 1e-6);
    EXPECT_LT(gradcheck::compare(gv[k].values, num).max_rel_error, 1e-3) << pv[k].name;
  }
}

TEST(Serialization, RoundTripByteIdentical) {
  TempDir dir("unet");
  const auto m = build_model(small_config(DnVariant::kDn4, 21));
  save_model(m, dir / "a.dnw");
  const auto loaded = load_model(dir / "a.dnw");
  save_model(loaded, dir / "b.dnw");
  EXPECT_EQ(io::read_file(dir / "a.dnw"), io::read_file(dir / "b.dnw"));
  EXPECT_EQ(loaded.config, m.config);
  const Tensor x = random_image({2, 3, 8, 16}, 22);
  EXPECT_EQ(model_forward(loaded, x).logits, model_forward(m, x).logits);
}

TEST(Serialization, HeaderLayout) {
  const io::Bytes b = serialize_model(build_model(small_config(DnVariant::kNone)));
  ASSERT_GT(b.size(), 20u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 8), "DNSEG001");
  const std::uint32_t stored = static_cast<std::uint32_t>(b[b.size() - 4]) |
                               static_cast<std::uint32_t>(b[b.size() - 3]) << 8 |
                               static_cast<std::uint32_t>(b[b.size() - 2]) << 16 |
                               static_cast<std::uint32_t>(b[b.size() - 1]) << 24;
  EXPECT_EQ(stored, io::crc32(std::span(b).first(b.size() - 4)));
}

TEST(Serialization, DistinctDiagnostics) {
  const io::Bytes good = serialize_model(build_model(small_config(DnVariant::kNone)));
  EXPECT_EQ(load_error(good, DnVariant::kDn4), FormatError::Kind::kVariantMismatch);

  io::Bytes magic = good;
  magic[0] = 'X';
  EXPECT_EQ(load_error(magic), FormatError::Kind::kBadMagic);

  io::Bytes version = good;
  version[7] = '9';
  EXPECT_EQ(load_error(version), FormatError::Kind::kVersionMismatch);

  io::Bytes flipped = good;
  flipped[flipped.size() - 20] ^= 0x01;
  EXPECT_EQ(load_error(flipped), FormatError::Kind::kChecksum);

  const io::Bytes truncated(good.begin(), good.end() - 50);
  EXPECT_EQ(load_error(truncated), FormatError::Kind::kTruncated);

  TempDir dir("unet_missing");
  try {
    load_model(dir / "nope.dnw");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kMissingFile);
  }
}

TEST(Config, JsonRoundTrip) {
  UNetConfig c = small_config(DnVariant::kDn1, 77);
  c.dn_window = 3;
  EXPECT_EQ(config_from_json(to_json(c)), c);
}

}  // namespace
}  // namespace dnseg::unet
