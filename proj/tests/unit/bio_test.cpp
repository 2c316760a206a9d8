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

#include <cmath>
#include <fstream>

#include "dnseg/bio.hpp"
#include "dnseg/error.hpp"
#include "dnseg/image_io.hpp"
#include "dnseg/metrics.hpp"
#include "test_util.hpp"

namespace dnseg::bio {
namespace {

using testing::TempDir;

TEST(FilterBank, ZeroDcAndUnitNorm) {
  const FilterBank bank = FilterBank::make();
  ASSERT_EQ(bank.kernels.size(), 13u);
  for (std::size_t b = 0; b < bank.band_count(); ++b) {
    double s = 0.0, s2 = 0.0;
    for (double v : bank.kernels[b].data()) {
      s += v;
      s2 += v * v;
    }
    if (b < bank.bandpass_count()) {
      EXPECT_NEAR(s, 0.0, 1e-12) << bank.band_name(b);
    }
    EXPECT_NEAR(s2, 1.0, 1e-12) << bank.band_name(b);
    EXPECT_EQ(bank.kernels[b].shape().h % 2, 1u);
  }
  EXPECT_EQ(bank.band_name(13 - 1), "lowpass");
  EXPECT_EQ(bank.band_name(5), "s1_o1");
  EXPECT_THROW(FilterBank::make(0, 4), ConfigError);
}

TEST(Analyze, ConstantInputGivesZeroBandpass) {
  const FilterBank bank = FilterBank::make();
  const Tensor z = analyze(Tensor({1, 1, 32, 32}, 0.6), bank);
  for (std::size_t b = 0; b < bank.bandpass_count(); ++b) {
    for (double v : z.plane(0, b)) EXPECT_NEAR(v, 0.0, 1e-12);
  }
}

TEST(Analyze, LinearAndGrayscaleOnly) {
  const FilterBank bank = FilterBank::make(2, 4);
  const Tensor x = contrast_ramp_grating(16, 16, 5.0, 0.1, 0.4);
  const Tensor a = analyze(scaled(x, 0.5), bank);
  const Tensor b = scaled(analyze(x, bank), 0.5);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
  EXPECT_THROW(analyze(Tensor({1, 3, 16, 16}), bank), ShapeError);
}

TEST(Analyze, VerticalGratingPeaksInMatchingBand) {
  const FilterBank bank = FilterBank::make();
  for (std::size_t s = 0; s < bank.scales; ++s) {
    // A sinusoid whose frequency sits at the peak of the scale's response.
    const double period = 2.0 * std::numbers::pi * bank.sigma(s) / std::sqrt(2.0);
    const Tensor g = contrast_ramp_grating(64, 64, period, 0.3, 0.3);
    const Tensor z = analyze(g, bank);
    std::size_t best = 0;
    double best_e = -1.0;
    for (std::size_t b = 0; b < bank.bandpass_count(); ++b) {
      double e = 0.0;
      for (double v : z.plane(0, b)) e += v * v;
      if (e > best_e) {
        best_e = e;
        best = b;
      }
    }
    EXPECT_EQ(best % bank.orientations, 0u) << "scale " << s;
    EXPECT_EQ(best / bank.orientations, s) << "scale " << s;
  }
}

TEST(NormalizeFixed, ZeroInZeroOut) {
  const FilterBank bank = FilterBank::make();
  const Tensor y = normalize_fixed(Tensor({1, 13, 16, 16}), bank, {});
  EXPECT_EQ(max_abs(y), 0.0);
}

TEST(NormalizeFixed, ConstantIsolatedBand) {
  const FilterBank bank = FilterBank::make();
  const FixedDnConfig cfg;
  const double c = 0.3;
  Tensor z({1, 13, 48, 48});
  for (double& v : z.plane(0, 4)) v = -c;
  const Tensor y = normalize_fixed(z, bank, cfg);
  // The Gaussian pool has unit gain.
  const double expected = -c / (cfg.beta + c);
  for (std::size_t yy = 0; yy < 48; ++yy) {
    for (std::size_t x = 0; x < 48; ++x) EXPECT_NEAR(y.at(0, 4, yy, x), expected, 1e-12);
  }
  EXPECT_EQ(max_abs(y), std::fabs(y.at(0, 4, 0, 0)));
}

TEST(NormalizeFixed, PreservesSign) {
  const FilterBank bank = FilterBank::make();
  const Tensor z = analyze(contrast_ramp_grating(32, 32, 6.0, 0.05, 0.45), bank);
  const Tensor y = normalize_fixed(z, bank, {});
  for (std::size_t i = 0; i < z.size(); ++i) ASSERT_EQ(std::signbit(y[i]), std::signbit(z[i]));
}

TEST(NormalizeFixed, RampEdgeRatioShrinks) {
  const FilterBank bank = FilterBank::make();
  const Tensor g = contrast_ramp_grating(32, 64, 8.0, 0.04, 0.45);
  const Tensor z = analyze(g, bank);
  const Tensor y = normalize_fixed(z, bank, {});
  const std::size_t band = 1 * bank.orientations;  // scale 1, orientation 0
  auto edge = [&](const Tensor& t, std::size_t x0) {
    double s = 0.0;
    for (std::size_t yy = 8; yy < 24; ++yy) {
      for (std::size_t x = x0; x < x0 + 8; ++x) s += std::fabs(t.at(0, band, yy, x));
    }
    return s;
  };
  EXPECT_LT(edge(y, 52) / edge(y, 4), edge(z, 52) / edge(z, 4));
}

TEST(Equalize, RampReducesCvForDominantBand) {
  const FilterBank bank = FilterBank::make();
  const DemoReport r =
      equalize_image(contrast_ramp_grating(64, 64, 8.0, 0.04, 0.45), bank, {}, 8);
  ASSERT_TRUE(r.dominant_band.has_value());
  const auto& b = r.bands[*r.dominant_band];
  ASSERT_TRUE(b.cv_before && b.cv_after);
  EXPECT_LT(*b.cv_after, *b.cv_before);
  EXPECT_EQ(r.scatter.size(), (64u / 8u) * (64u / 8u));
}

TEST(Equalize, DominantBandAcrossStimuli) {
  const FilterBank bank = FilterBank::make();
  for (double period : {4.0, 6.0, 9.0, 13.0}) {
    for (double lo : {0.02, 0.05, 0.1}) {
      const DemoReport r =
          equalize_image(contrast_ramp_grating(64, 64, period, lo, 0.48), bank, {}, 8);
      ASSERT_TRUE(r.dominant_band.has_value());
      const auto& b = r.bands[*r.dominant_band];
      EXPECT_LT(*b.cv_after, *b.cv_before) << "period " << period << " lo " << lo;
    }
  }
}

TEST(Equalize, UniformImageIsDegenerate) {
  TempDir dir("bio_flat");
  const Tensor flat({1, 1, 32, 32}, 0.5);
  image_io::write_pnm_unit(dir / "flat.pgm", flat);
  const DemoReport r = demo_equalize(dir / "flat.pgm", dir / "out");
  EXPECT_TRUE(r.degenerate);
  EXPECT_FALSE(r.dominant_band.has_value());
  for (std::size_t b = 0; b < 12; ++b) EXPECT_FALSE(r.bands[b].cv_before.has_value());
}

TEST(Equalize, DemoWritesOutputs) {
  TempDir dir("bio_demo");
  image_io::write_pnm_unit(dir / "ramp.pgm", contrast_ramp_grating(32, 48, 6.0, 0.05, 0.45));
  const DemoReport r = demo_equalize(dir / "ramp.pgm", dir / "out");
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "report.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "scatter.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "band_s0_o0_before.pgm"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "band_lowpass_after.pgm"));
  EXPECT_EQ(r.scatter.size(), (32u / 8u) * (48u / 8u));
  const auto j = nlohmann::json::parse(std::ifstream(dir / "out" / "scatter.json"));
  EXPECT_EQ(j["patches"].size(), r.scatter.size());
  EXPECT_THROW(demo_equalize(dir / "missing.pgm", dir / "out"), FormatError);
}

TEST(FixedDnConfig, Validation) {
  FixedDnConfig c;
  c.beta = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = FixedDnConfig{};
  c.coupling = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace dnseg::bio
