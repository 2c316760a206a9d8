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

#include "dnseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dnseg/error.hpp"
#include "dnseg/rng.hpp"

namespace dnseg::data {

bool LabelMap::contains(std::uint16_t label) const {
  return std::find(values.begin(), values.end(), label) != values.end();
}

LabelMap stack(const std::vector<const LabelMap*>& maps) {
  if (maps.empty()) throw ShapeError("stack: no label maps");
  const std::size_t h = maps.front()->h, w = maps.front()->w;
  std::size_t n = 0;
  for (const LabelMap* m : maps) {
    if (m->h != h || m->w != w) throw ShapeError("stack: label maps differ in size");
    n += m->n;
  }
  LabelMap out(n, h, w);
  auto it = out.values.begin();
  for (const LabelMap* m : maps) it = std::copy(m->values.begin(), m->values.end(), it);
  return out;
}

Tensor stack(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw ShapeError("stack: no tensors");
  const Shape s0 = images.front()->shape();
  std::size_t n = 0;
  for (const Tensor* t : images) {
    const Shape& s = t->shape();
    if (s.c != s0.c || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("stack: tensors " + s0.str() + " and " + s.str() + " differ");
    }
    n += s.n;
  }
  std::vector<double> v;
  v.reserve(n * s0.c * s0.plane());
  for (const Tensor* t : images) v.insert(v.end(), t->values().begin(), t->values().end());
  return Tensor({n, s0.c, s0.h, s0.w}, std::move(v));
}

std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::kNone: return "none";
    case Severity::kLow: return "low";
    case Severity::kMid: return "mid";
    case Severity::kHigh: return "high";
  }
  return "none";
}

Severity parse_severity(std::string_view s) {
  for (Severity v : kAllSeverities) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown fog severity '" + std::string(s) + "'");
}

FogParams FogParams::preset(Severity s) {
  FogParams f;
  f.severity = s;
  switch (s) {
    case Severity::kNone: f.attenuation = 0.0; break;
    case Severity::kLow: f.attenuation = 0.5; break;
    case Severity::kMid: f.attenuation = 1.0; break;
    case Severity::kHigh: f.attenuation = 2.0; break;
  }
  return f;
}

void FogParams::validate() const {
  if (!(attenuation >= 0.0) || !std::isfinite(attenuation)) {
    throw ConfigError("fog: attenuation must be finite and >= 0");
  }
  for (double a : airlight) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("fog: airlight components must be in [0, 1]");
  }
}

std::vector<std::string> class_names(std::size_t num_classes) {
  static const char* const kShapes[3] = {"rectangle", "ellipse", "triangle"};
  std::vector<std::string> names{"background"};
  for (std::size_t c = 1; c < num_classes; ++c) {
    std::string n = kShapes[(c - 1) % 3];
    if (c > 3) n += "_" + std::to_string((c - 1) / 3 + 1);
    names.push_back(n);
  }
  return names;
}

// ---------------------------------------------------------------------------
// Scene synthesis

namespace {

constexpr double kNearDepth = 0.1;
constexpr double kFarDepth = 0.8;
constexpr double kTexturePeriod = 4.0;

// Smooth noise: bilinear interpolation of a coarse Gaussian grid.
std::vector<double> band_limited_noise(Rng& rng, std::size_t h, std::size_t w, std::size_t cell) {
  const std::size_t gh = h / cell + 2, gw = w / cell + 2;
  std::vector<double> grid(gh * gw);
  for (double& g : grid) g = rng.normal();
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) / static_cast<double>(cell);
    const auto y0 = static_cast<std::size_t>(fy);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / static_cast<double>(cell);
      const auto x0 = static_cast<std::size_t>(fx);
      const double tx = fx - static_cast<double>(x0);
      const double a = grid[y0 * gw + x0], b = grid[y0 * gw + x0 + 1];
      const double c = grid[(y0 + 1) * gw + x0], d = grid[(y0 + 1) * gw + x0 + 1];
      out[y * w + x] = (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
    }
  }
  return out;
}

enum class ShapeKind { kRect, kEllipse, kTriangle };

struct Object {
  std::uint16_t cls;
  ShapeKind kind;
  double cx, cy, rx, ry;
  double depth;
  std::array<double, 3> color;
  double texture_angle;
  double texture_phase;
  double texture_amp;
};

bool covers(const Object& o, double x, double y) {
  const double dx = x - o.cx, dy = y - o.cy;
  switch (o.kind) {
    case ShapeKind::kRect: return std::fabs(dx) <= o.rx && std::fabs(dy) <= o.ry;
    case ShapeKind::kEllipse: return (dx * dx) / (o.rx * o.rx) + (dy * dy) / (o.ry * o.ry) <= 1.0;
    case ShapeKind::kTriangle: {
      // Apex up, base at cy + ry.
      if (dy > o.ry || dy < -o.ry) return false;
      const double half = o.rx * (dy + o.ry) / (2.0 * o.ry);
      return std::fabs(dx) <= half;
    }
  }
  return false;
}

double ground_depth(std::size_t y, std::size_t h) {
  const double t = h > 1 ? static_cast<double>(y) / static_cast<double>(h - 1) : 1.0;
  return kFarDepth + (kNearDepth - kFarDepth) * t;
}

}  // namespace

SceneSample generate_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                           std::size_t num_classes, const SceneOptions& options) {
  if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
    throw ShapeError("generate_scene: height and width must be positive multiples of 8, got " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  if (num_classes < 3) throw ConfigError("generate_scene: need at least 3 classes");
  if (num_classes > 65535) throw ConfigError("generate_scene: too many classes");
  if (options.min_objects > options.max_objects) {
    throw ConfigError("generate_scene: min_objects > max_objects");
  }

  Rng rng = Rng::substream(seed, "data");
  const std::size_t H = height, W = width;
  const double dim = static_cast<double>(std::min(H, W));

  // Illumination: linear ramp in a random direction.
  const double light_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double light_lo = rng.uniform(0.35, 1.0);
  std::vector<double> light(H * W);
  {
    const double ux = std::cos(light_angle), uy = std::sin(light_angle);
    double lo = 1e300, hi = -1e300;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double p = ux * static_cast<double>(x) + uy * static_cast<double>(y);
        light[y * W + x] = p;
        lo = std::min(lo, p);
        hi = std::max(hi, p);
      }
    }
    for (double& l : light) l = light_lo + (1.0 - light_lo) * (hi > lo ? (l - lo) / (hi - lo) : 1.0);
  }

  // Ground plane albedo.
  std::array<double, 3> ground{rng.uniform(0.3, 0.5), rng.uniform(0.3, 0.5), rng.uniform(0.25, 0.45)};
  const std::vector<double> ground_noise = band_limited_noise(rng, H, W, 4);

  // Objects.
  std::size_t count = options.object_count.value_or(
      options.min_objects + rng.index(options.max_objects - options.min_objects + 1));
  std::vector<Object> objects;
  for (std::size_t k = 0; k < count; ++k) {
    Object o;
    o.cls = static_cast<std::uint16_t>(k == 0 ? 1 : 1 + rng.index(num_classes - 1));
    o.kind = static_cast<ShapeKind>((o.cls - 1) % 3);
    o.rx = rng.uniform(0.12, 0.28) * dim;
    o.ry = rng.uniform(0.12, 0.28) * dim;
    o.cx = rng.uniform(0.0, static_cast<double>(W - 1));
    o.cy = rng.uniform(0.0, static_cast<double>(H - 1));
    const double base = std::clamp(o.cy + o.ry, 0.0, static_cast<double>(H - 1));
    o.depth = ground_depth(static_cast<std::size_t>(base), H);
    // Base colour: a class hue with per-object brightness and tint jitter.
    const double hue = 2.0 * std::numbers::pi * static_cast<double>(o.cls - 1) /
                       static_cast<double>(num_classes - 1);
    const double value = rng.uniform(0.45, 0.65);
    for (std::size_t c = 0; c < 3; ++c) {
      const double phase = hue - 2.0 * std::numbers::pi * static_cast<double>(c) / 3.0;
      o.color[c] = std::clamp(value + 0.3 * std::cos(phase) + rng.uniform(-0.08, 0.08), 0.0, 1.0);
    }
    const std::size_t group = (o.cls - 1) / 3;
    o.texture_angle = static_cast<double>((o.cls - 1) % 3) * std::numbers::pi / 3.0 +
                      static_cast<double>(group) * std::numbers::pi / 6.0;
    o.texture_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    o.texture_amp = rng.uniform(0.25, 0.45);
    objects.push_back(o);
  }
  // The first object (class 1) is always in front, so class 1 is visible.
  if (objects.size() > 1) {
    double nearest = objects[1].depth;
    for (std::size_t k = 2; k < objects.size(); ++k) nearest = std::min(nearest, objects[k].depth);
    objects[0].depth = std::min(objects[0].depth, 0.95 * nearest);
  }
  const std::vector<double> object_noise = band_limited_noise(rng, H, W, 2);

  SceneSample s;
  for (;;) {
    s.image = Tensor({1, 3, H, W});
    s.labels = LabelMap(1, H, W);
    s.depth = Tensor({1, 1, H, W});
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double px = static_cast<double>(x), py = static_cast<double>(y);
        const Object* front = nullptr;
        for (const Object& o : objects) {
          if (covers(o, px, py) && (front == nullptr || o.depth < front->depth)) front = &o;
        }
        const std::size_t i = y * W + x;
        std::array<double, 3> albedo;
        if (front == nullptr) {
          const double n = 0.06 * ground_noise[i];
          for (std::size_t c = 0; c < 3; ++c) albedo[c] = ground[c] + n;
          s.depth.at(0, 0, y, x) = ground_depth(y, H);
        } else {
          const double u = px * std::cos(front->texture_angle) + py * std::sin(front->texture_angle);
          const double stripe =
              std::sin(2.0 * std::numbers::pi * u / kTexturePeriod + front->texture_phase);
          const double mod = 1.0 + front->texture_amp * stripe + 0.04 * object_noise[i];
          for (std::size_t c = 0; c < 3; ++c) albedo[c] = front->color[c] * mod;
          s.depth.at(0, 0, y, x) = front->depth;
          s.labels.at(0, y, x) = front->cls;
        }
        for (std::size_t c = 0; c < 3; ++c) {
          s.image.at(0, c, y, x) = std::clamp(light[i] * albedo[c], 0.0, 1.0);
        }
      }
    }
    if (s.labels.contains(0) || objects.size() <= 1) break;
    objects.pop_back();
  }
  return s;
}

Tensor transmittance(const Tensor& depth, double attenuation) {
  Tensor t(depth.shape());
  auto d = depth.data();
  auto o = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) o[i] = std::exp(-attenuation * d[i]);
  return t;
}

Tensor apply_fog(const Tensor& image, const Tensor& depth, const FogParams& fog) {
  fog.validate();
  const Shape& s = image.shape();
  if (s.c != 3) throw ShapeError("apply_fog: image " + s.str() + " must have 3 channels");
  if (depth.shape().n != s.n || depth.shape().c != 1 || depth.shape().h != s.h ||
      depth.shape().w != s.w) {
    throw ShapeError("apply_fog: depth " + depth.shape().str() + " does not match image " +
                     s.str());
  }
  for (double d : depth.data()) {
    if (!(d >= 0.0)) throw ShapeError("apply_fog: negative or NaN depth");
  }
  const Tensor t = transmittance(depth, fog.attenuation);
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double a = fog.airlight[c];
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
          const double tv = t.at(n, 0, y, x);
          out.at(n, c, y, x) = std::clamp(image.at(n, c, y, x) * tv + a * (1.0 - tv), 0.0, 1.0);
        }
      }
    }
  }
  return out;
}

Tensor apply_fog(const SceneSample& sample, const FogParams& fog) {
  return apply_fog(sample.image, sample.depth, fog);
}

Tensor luminance(const Tensor& rgb) {
  const Shape& s = rgb.shape();
  if (s.c != 3) throw ShapeError("luminance: expected 3 channels, got " + s.str());
  Tensor out({s.n, 1, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    auto r = rgb.plane(n, 0), g = rgb.plane(n, 1), b = rgb.plane(n, 2);
    auto o = out.plane(n, 0);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  }
  return out;
}

double rms_contrast(const Tensor& rgb) {
  const Tensor l = luminance(rgb);
  double mean = 0.0;
  for (double v : l.data()) mean += v;
  mean /= static_cast<double>(l.size());
  double var = 0.0;
  for (double v : l.data()) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(l.size()));
}

}  // namespace dnseg::data
