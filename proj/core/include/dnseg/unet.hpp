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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnseg/binary_io.hpp"
#include "dnseg/divnorm.hpp"
#include "dnseg/tensor.hpp"

namespace dnseg::unet {

/// Where divisive normalization is inserted.
///   kNone: plain U-Net.
///   kDn1:  one layer on the raw input, before the first convolution.
///   kDn4:  the input layer plus one after the ReLU of each encoder stage.
enum class DnVariant { kNone, kDn1, kDn4 };

inline constexpr std::size_t kMaxDnSites = 4;
inline constexpr std::size_t kDepth = 3;

std::string_view to_string(DnVariant v);
/// Accepts "none", "dn1", "dn4"; throws ConfigError otherwise.
DnVariant parse_variant(std::string_view s);
/// Whether DN site `site` (1-based, 1 = input) exists in the variant.
bool has_site(DnVariant v, int site);

struct UNetConfig {
  std::size_t in_channels = 3;
  std::size_t num_classes = 4;
  std::array<std::size_t, kDepth> encoder_channels{16, 32, 64};
  DnVariant variant = DnVariant::kNone;
  std::size_t dn_window = divnorm::kDefaultWindow;
  std::uint64_t seed = 0;

  void validate() const;
  /// Channels seen by DN site 1..4.
  std::size_t site_channels(int site) const;

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

nlohmann::json to_json(const UNetConfig& c);
UNetConfig config_from_json(const nlohmann::json& j);

struct ConvLayer {
  std::string name;
  ConvSpec spec;
  Tensor weights;
  std::vector<double> bias;
};

enum class ParamKind { kConvWeight, kConvBias, kDnBeta, kDnGamma };

struct ParamView {
  std::string name;
  ParamKind kind;
  std::vector<std::size_t> shape;
  std::span<double> values;
};

struct ConstParamView {
  std::string name;
  ParamKind kind;
  std::vector<std::size_t> shape;
  std::span<const double> values;
};

/// Every trainable array of the network. Gradients use the same type.
struct Parameters {
  // enc1 enc2 enc3 bottleneck dec3 dec2 dec1 head
  std::vector<ConvLayer> convs;
  // DN site s lives at dn[s - 1].
  std::array<std::optional<divnorm::DnParams>, kMaxDnSites> dn;

  /// Stable order: convolutions (weights, bias) then DN sites (beta, gamma).
  std::vector<ParamView> views();
  std::vector<ConstParamView> views() const;
  std::size_t count() const;
  Parameters zeros_like() const;
  std::size_t dn_site_count() const;
  /// beta >= 1e-6 and gamma >= 0 at every DN site.
  bool dn_constraints_hold() const;
  void project_dn();
};

enum ConvIndex : std::size_t {
  kEnc1 = 0, kEnc2, kEnc3, kBottleneck, kDec3, kDec2, kDec1, kHead, kConvCount
};

struct UNetModel {
  UNetConfig config;
  Parameters params;

  std::size_t parameter_count() const { return params.count(); }
};

/// Deterministic construction from config.seed. Conv weights are uniform in
/// +-sqrt(6 / (fan_in + fan_out)); biases are 0.1 for layers followed by a
/// ReLU and 1 / num_classes for the head. DN sites use DnParams::initialize. All
/// convolutions use reflect padding.
UNetModel build_model(const UNetConfig& config);

struct DnCache {
  Tensor z;      // input to the layer
  Tensor denom;  // pooled denominator
  Tensor y;      // output
};

/// Activations retained by model_forward for model_backward.
struct ForwardCache {
  Tensor input;
  std::array<std::optional<DnCache>, kMaxDnSites> dn;
  std::array<Tensor, kDepth> enc_in, enc_pre, enc_out;
  std::array<ArgmaxIndices, kDepth> pool_argmax;
  Tensor bott_in, bott_pre;
  std::array<Tensor, kDepth> dec_in, dec_pre;  // index 0 is the deepest decoder stage
  Tensor head_in;
};

struct ForwardResult {
  Tensor logits;
  ForwardCache cache;
};

/// Requires h and w divisible by 8.
ForwardResult model_forward(const UNetModel& model, const Tensor& batch);

struct BackwardOptions {
  // Ablation hook: drop the gradient arriving at this DN site's output.
  std::optional<int> zero_grad_at_site;
};

Parameters model_backward(const UNetModel& model, const ForwardCache& cache,
                          const Tensor& grad_logits, const BackwardOptions& options = {});

/// Weight file layout:
///   "DNSEG001" | u64 header length | UTF-8 JSON header | f64 blobs | u32 CRC-32
/// The header holds the config and a tensor directory (name, shape, byte
/// offset into the blob region). All integers and floats are little-endian.
io::Bytes serialize_model(const UNetModel& model);
UNetModel deserialize_model(std::span<const std::uint8_t> bytes,
                            std::optional<DnVariant> expected = std::nullopt,
                            const std::string& context = "model");
void save_model(const UNetModel& model, const std::filesystem::path& path);
UNetModel load_model(const std::filesystem::path& path,
                     std::optional<DnVariant> expected = std::nullopt);

}  // namespace dnseg::unet
