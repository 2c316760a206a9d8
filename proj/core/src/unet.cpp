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

#include "dnseg/unet.hpp"

#include <cmath>
#include <map>

#include "dnseg/error.hpp"
#include "dnseg/rng.hpp"

namespace dnseg::unet {

namespace {

constexpr std::string_view kMagic = "DNSEG001";
constexpr std::string_view kMagicFamily = "DNSEG";

constexpr double kHiddenBias = 0.1;

const char* const kConvNames[kConvCount] = {"enc1", "enc2", "enc3", "bottleneck",
                                            "dec3", "dec2", "dec1", "head"};

// Glorot-uniform weights.
ConvLayer make_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                    Rng& rng, double bias = kHiddenBias) {
  ConvLayer layer;
  layer.name = name;
  layer.spec = {in, out, k, k, 1, Padding::kReflect};
  layer.weights = Tensor(layer.spec.weight_shape());
  const double fan_in = static_cast<double>(in * k * k);
  const double fan_out = static_cast<double>(out * k * k);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& w : layer.weights.data()) w = rng.uniform(-limit, limit);
  layer.bias.assign(out, bias);
  return layer;
}

std::vector<std::size_t> dims(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

}  // namespace

std::string_view to_string(DnVariant v) {
  switch (v) {
    case DnVariant::kNone: return "none";
    case DnVariant::kDn1: return "dn1";
    case DnVariant::kDn4: return "dn4";
  }
  return "none";
}

DnVariant parse_variant(std::string_view s) {
  if (s == "none") return DnVariant::kNone;
  if (s == "dn1") return DnVariant::kDn1;
  if (s == "dn4") return DnVariant::kDn4;
  throw ConfigError("unknown DN variant '" + std::string(s) + "' (expected none|dn1|dn4)");
}

bool has_site(DnVariant v, int site) {
  switch (v) {
    case DnVariant::kNone: return false;
    case DnVariant::kDn1: return site == 1;
    case DnVariant::kDn4: return site >= 1 && site <= 4;
  }
  return false;
}

void UNetConfig::validate() const {
  if (in_channels == 0) throw ConfigError("unet: in_channels must be positive");
  if (num_classes < 2) throw ConfigError("unet: num_classes must be >= 2");
  for (std::size_t c : encoder_channels) {
    if (c == 0) throw ConfigError("unet: encoder channels must be positive");
  }
  if (dn_window % 2 == 0) throw ConfigError("unet: dn_window must be odd");
}

std::size_t UNetConfig::site_channels(int site) const {
  if (site == 1) return in_channels;
  if (site >= 2 && site <= 4) return encoder_channels[static_cast<std::size_t>(site - 2)];
  throw ConfigError("unet: DN site must be in 1..4, got " + std::to_string(site));
}

nlohmann::json to_json(const UNetConfig& c) {
  return {
      {"in_channels", c.in_channels},
      {"num_classes", c.num_classes},
      {"encoder_channels", c.encoder_channels},
      {"dn_variant", std::string(to_string(c.variant))},
      {"dn_window", c.dn_window},
      {"seed", c.seed},
  };
}

UNetConfig config_from_json(const nlohmann::json& j) {
  try {
    UNetConfig c;
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    const auto enc = j.at("encoder_channels").get<std::vector<std::size_t>>();
    if (enc.size() != kDepth) throw ConfigError("unet: encoder depth must be 3");
    std::copy(enc.begin(), enc.end(), c.encoder_channels.begin());
    c.variant = parse_variant(j.at("dn_variant").get<std::string>());
    c.dn_window = j.at("dn_window").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kMalformed, std::string("unet config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<ParamView> Parameters::views() {
  std::vector<ParamView> v;
  for (ConvLayer& c : convs) {
    v.push_back({c.name + ".weight", ParamKind::kConvWeight, dims(c.weights.shape()),
                 c.weights.data()});
    v.push_back({c.name + ".bias", ParamKind::kConvBias, {c.bias.size()}, c.bias});
  }
  for (std::size_t s = 0; s < dn.size(); ++s) {
    if (!dn[s]) continue;
    const std::string base = "dn" + std::to_string(s + 1);
    v.push_back({base + ".beta", ParamKind::kDnBeta, {dn[s]->beta.size()}, dn[s]->beta});
    v.push_back({base + ".gamma", ParamKind::kDnGamma, dims(dn[s]->gamma.shape()),
                 dn[s]->gamma.data()});
  }
  return v;
}

std::vector<ConstParamView> Parameters::views() const {
  std::vector<ConstParamView> out;
  for (ParamView& p : const_cast<Parameters*>(this)->views()) {
    out.push_back({std::move(p.name), p.kind, std::move(p.shape), p.values});
  }
  return out;
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& v : views()) n += v.values.size();
  return n;
}

Parameters Parameters::zeros_like() const {
  Parameters z = *this;
  for (auto& v : z.views()) std::fill(v.values.begin(), v.values.end(), 0.0);
  return z;
}

std::size_t Parameters::dn_site_count() const {
  std::size_t n = 0;
  for (const auto& d : dn) n += d.has_value() ? 1 : 0;
  return n;
}

bool Parameters::dn_constraints_hold() const {
  for (const auto& d : dn) {
    if (d && !d->satisfies_constraints()) return false;
  }
  return true;
}

void Parameters::project_dn() {
  for (auto& d : dn) {
    if (d) d->project();
  }
}

// ---------------------------------------------------------------------------
// Construction

UNetModel build_model(const UNetConfig& config) {
  config.validate();
  Rng rng = Rng::substream(config.seed, "init");
  const auto& ch = config.encoder_channels;
  UNetModel m;
  m.config = config;
  auto& convs = m.params.convs;
  convs.push_back(make_conv(kConvNames[kEnc1], config.in_channels, ch[0], 3, rng));
  convs.push_back(make_conv(kConvNames[kEnc2], ch[0], ch[1], 3, rng));
  convs.push_back(make_conv(kConvNames[kEnc3], ch[1], ch[2], 3, rng));
  convs.push_back(make_conv(kConvNames[kBottleneck], ch[2], ch[2], 3, rng));
  convs.push_back(make_conv(kConvNames[kDec3], ch[2] + ch[2], ch[1], 3, rng));
  convs.push_back(make_conv(kConvNames[kDec2], ch[1] + ch[1], ch[0], 3, rng));
  convs.push_back(make_conv(kConvNames[kDec1], ch[0] + ch[0], ch[0], 3, rng));
  // Head scores start at the mean one-hot target.
  const double head_bias = 1.0 / static_cast<double>(config.num_classes);
  convs.push_back(make_conv(kConvNames[kHead], ch[0], config.num_classes, 1, rng, head_bias));
  for (int site = 1; site <= static_cast<int>(kMaxDnSites); ++site) {
    if (has_site(config.variant, site)) {
      m.params.dn[static_cast<std::size_t>(site - 1)] =
          divnorm::DnParams::initialize(config.site_channels(site), config.dn_window);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

Tensor conv(const ConvLayer& layer, const Tensor& x) {
  return conv2d_forward(x, layer.weights, layer.bias, layer.spec);
}

void accumulate(ConvLayer& dst, ConvGrads& g) {
  add_inplace(dst.weights, g.weights);
  for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += g.bias[i];
}

}  // namespace

ForwardResult model_forward(const UNetModel& model, const Tensor& batch) {
  const UNetConfig& cfg = model.config;
  const Shape& s = batch.shape();
  if (s.c != cfg.in_channels) {
    throw ShapeError("model_forward: batch " + s.str() + " must have " +
                     std::to_string(cfg.in_channels) + " channels");
  }
  if (s.h == 0 || s.w == 0 || s.h % 8 != 0 || s.w % 8 != 0) {
    throw ShapeError("model_forward: spatial dims of " + s.str() +
                     " must be positive multiples of 8 (three 2x2 pooling stages)");
  }
  const auto& P = model.params;
  ForwardResult r;
  ForwardCache& c = r.cache;
  c.input = batch;

  Tensor x = batch;
  if (P.dn[0]) {
    auto f = divnorm::dn_forward(x, *P.dn[0]);
    x = f.y;
    c.dn[0] = DnCache{batch, std::move(f.denom), std::move(f.y)};
  }
  for (std::size_t st = 0; st < kDepth; ++st) {
    c.enc_in[st] = x;
    c.enc_pre[st] = conv(P.convs[kEnc1 + st], x);
    Tensor act = relu_forward(c.enc_pre[st]);
    if (P.dn[st + 1]) {
      auto f = divnorm::dn_forward(act, *P.dn[st + 1]);
      c.enc_out[st] = f.y;
      c.dn[st + 1] = DnCache{std::move(act), std::move(f.denom), std::move(f.y)};
    } else {
      c.enc_out[st] = std::move(act);
    }
    PoolResult p = maxpool2_forward(c.enc_out[st]);
    c.pool_argmax[st] = std::move(p.argmax);
    x = std::move(p.output);
  }
  c.bott_in = x;
  c.bott_pre = conv(P.convs[kBottleneck], x);
  x = relu_forward(c.bott_pre);
  for (std::size_t d = 0; d < kDepth; ++d) {
    c.dec_in[d] = concat_channels(upsample2_forward(x), c.enc_out[kDepth - 1 - d]);
    c.dec_pre[d] = conv(P.convs[kDec3 + d], c.dec_in[d]);
    x = relu_forward(c.dec_pre[d]);
  }
  c.head_in = x;
  r.logits = conv(P.convs[kHead], x);
  return r;
}

Parameters model_backward(const UNetModel& model, const ForwardCache& c,
                          const Tensor& grad_logits, const BackwardOptions& options) {
  const auto& P = model.params;
  Parameters G = P.zeros_like();

  ConvGrads cg = conv2d_backward(c.head_in, P.convs[kHead].weights, grad_logits,
                                 P.convs[kHead].spec);
  accumulate(G.convs[kHead], cg);
  Tensor g = std::move(cg.input);

  std::array<Tensor, kDepth> skip_grad;
  for (std::size_t k = 0; k < kDepth; ++k) {
    const std::size_t d = kDepth - 1 - k;
    g = relu_backward(c.dec_pre[d], g);
    cg = conv2d_backward(c.dec_in[d], P.convs[kDec3 + d].weights, g, P.convs[kDec3 + d].spec);
    accumulate(G.convs[kDec3 + d], cg);
    const std::size_t skip_c = c.enc_out[kDepth - 1 - d].shape().c;
    auto [gu, gs] = split_channels(cg.input, c.dec_in[d].shape().c - skip_c);
    skip_grad[kDepth - 1 - d] = std::move(gs);
    g = upsample2_backward(gu);
  }

  g = relu_backward(c.bott_pre, g);
  cg = conv2d_backward(c.bott_in, P.convs[kBottleneck].weights, g, P.convs[kBottleneck].spec);
  accumulate(G.convs[kBottleneck], cg);
  g = std::move(cg.input);

  for (std::size_t k = 0; k < kDepth; ++k) {
    const std::size_t st = kDepth - 1 - k;
    g = maxpool2_backward(g, c.pool_argmax[st], c.enc_out[st].shape());
    add_inplace(g, skip_grad[st]);
    if (options.zero_grad_at_site == static_cast<int>(st + 2)) g.fill(0.0);
    if (P.dn[st + 1]) {
      const DnCache& dc = *c.dn[st + 1];
      auto dg = divnorm::dn_backward(dc.z, *P.dn[st + 1], dc.denom, g);
      auto& gd = *G.dn[st + 1];
      gd.beta = std::move(dg.beta);
      gd.gamma = std::move(dg.gamma);
      g = std::move(dg.z);
    }
    g = relu_backward(c.enc_pre[st], g);
    cg = conv2d_backward(c.enc_in[st], P.convs[kEnc1 + st].weights, g, P.convs[kEnc1 + st].spec);
    accumulate(G.convs[kEnc1 + st], cg);
    g = std::move(cg.input);
  }

  if (options.zero_grad_at_site == 1) g.fill(0.0);
  if (P.dn[0]) {
    const DnCache& dc = *c.dn[0];
    auto dg = divnorm::dn_backward(dc.z, *P.dn[0], dc.denom, g);
    G.dn[0]->beta = std::move(dg.beta);
    G.dn[0]->gamma = std::move(dg.gamma);
  }
  return G;
}

// ---------------------------------------------------------------------------
// Serialization

io::Bytes serialize_model(const UNetModel& model) {
  nlohmann::json dir = nlohmann::json::array();
  std::size_t offset = 0;
  const auto views = model.params.views();
  for (const auto& v : views) {
    dir.push_back({{"name", v.name}, {"shape", v.shape}, {"offset", offset}});
    offset += v.values.size() * sizeof(double);
  }
  const nlohmann::json header = {
      {"config", to_json(model.config)},
      {"tensors", dir},
      {"blob_bytes", offset},
  };
  const std::string text = header.dump();

  io::Bytes out;
  out.reserve(kMagic.size() + 8 + text.size() + offset + 4);
  io::put_bytes(out, kMagic);
  io::put_u64(out, text.size());
  io::put_bytes(out, text);
  for (const auto& v : views) {
    for (double x : v.values) io::put_f64(out, x);
  }
  io::put_u32(out, io::crc32(out));
  return out;
}

UNetModel deserialize_model(std::span<const std::uint8_t> bytes, std::optional<DnVariant> expected,
                            const std::string& context) {
  using Kind = FormatError::Kind;
  io::Reader rd(bytes, context);
  if (bytes.size() < kMagic.size()) {
    throw FormatError(Kind::kTruncated, context + ": truncated before magic bytes");
  }
  const std::string_view magic = rd.chars(kMagic.size());
  if (magic != kMagic) {
    if (magic.substr(0, kMagicFamily.size()) == kMagicFamily) {
      throw FormatError(Kind::kVersionMismatch, context + ": unsupported weight file version '" +
                                                    std::string(magic) + "', expected " +
                                                    std::string(kMagic));
    }
    throw FormatError(Kind::kBadMagic, context + ": not a dnseg weight file (bad magic)");
  }
  const std::uint64_t hlen = rd.u64();
  const std::string_view text = rd.chars(hlen);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Kind::kMalformed, context + ": bad JSON header: " + e.what());
  }
  std::size_t blob_bytes = 0;
  try {
    blob_bytes = header.at("blob_bytes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Kind::kMalformed, context + ": header lacks blob_bytes");
  }
  if (rd.remaining() < blob_bytes + 4) {
    throw FormatError(Kind::kTruncated, context + ": truncated tensor data (" +
                                            std::to_string(rd.remaining()) + " bytes left, " +
                                            std::to_string(blob_bytes + 4) + " expected)");
  }
  if (rd.remaining() > blob_bytes + 4) {
    throw FormatError(Kind::kMalformed, context + ": trailing bytes after checksum");
  }
  const std::size_t blob_start = rd.position();
  const auto body = bytes.first(bytes.size() - 4);
  io::Reader trailer(bytes.last(4), context);
  const std::uint32_t stored = trailer.u32();
  if (io::crc32(body) != stored) {
    throw FormatError(Kind::kChecksum, context + ": CRC-32 checksum mismatch");
  }

  UNetConfig cfg;
  try {
    cfg = config_from_json(header.at("config"));
  } catch (const ConfigError& e) {
    throw FormatError(Kind::kMalformed, context + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Kind::kMalformed, context + ": header lacks config");
  }
  if (expected && *expected != cfg.variant) {
    throw FormatError(Kind::kVariantMismatch,
                      context + ": file holds a '" + std::string(to_string(cfg.variant)) +
                          "' model, requested '" + std::string(to_string(*expected)) + "'");
  }
  UNetModel m = build_model(cfg);
  std::map<std::string, ParamView> by_name;
  for (auto& v : m.params.views()) by_name.emplace(v.name, v);

  try {
    const auto& tensors = header.at("tensors");
    if (tensors.size() != by_name.size()) {
      throw FormatError(Kind::kShapeMismatch, context + ": tensor directory has " +
                                                  std::to_string(tensors.size()) +
                                                  " entries, model expects " +
                                                  std::to_string(by_name.size()));
    }
    for (const auto& t : tensors) {
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      const auto offset = t.at("offset").get<std::size_t>();
      auto it = by_name.find(name);
      if (it == by_name.end()) {
        throw FormatError(Kind::kMalformed, context + ": unknown tensor '" + name + "'");
      }
      ParamView& v = it->second;
      if (shape != v.shape) {
        throw FormatError(Kind::kShapeMismatch, context + ": tensor '" + name +
                                                    "' has unexpected shape");
      }
      if (offset + v.values.size() * sizeof(double) > blob_bytes) {
        throw FormatError(Kind::kMalformed, context + ": tensor '" + name + "' out of range");
      }
      io::Reader blob(bytes.subspan(blob_start + offset, v.values.size() * sizeof(double)),
                      context);
      for (double& x : v.values) x = blob.f64();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Kind::kMalformed, context + ": bad tensor directory: " + e.what());
  }
  return m;
}

void save_model(const UNetModel& model, const std::filesystem::path& path) {
  io::write_file(path, serialize_model(model));
}

UNetModel load_model(const std::filesystem::path& path, std::optional<DnVariant> expected) {
  const io::Bytes bytes = io::read_file(path);
  return deserialize_model(bytes, expected, path.string());
}

}  // namespace dnseg::unet
