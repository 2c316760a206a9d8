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

#include "dnseg/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "dnseg/binary_io.hpp"
#include "dnseg/data.hpp"
#include "dnseg/error.hpp"

namespace dnseg::image_io {

using Kind = FormatError::Kind;

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::size_t header_int(const io::Bytes& b, std::size_t& pos, const std::string& name) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t v = 0;
  std::size_t digits = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + static_cast<std::size_t>(b[pos] - '0');
    ++pos;
    ++digits;
  }
  if (digits == 0) throw FormatError(Kind::kMalformed, name + ": bad PNM header");
  return v;
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  const io::Bytes b = io::read_file(path);
  const std::string name = path.string();
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) {
    throw FormatError(Kind::kBadMagic, name + ": not a binary PGM/PPM image");
  }
  const std::size_t channels = b[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  const std::size_t w = header_int(b, pos, name);
  const std::size_t h = header_int(b, pos, name);
  const std::size_t maxval = header_int(b, pos, name);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw FormatError(Kind::kMalformed, name + ": bad PNM dimensions or maxval");
  }
  ++pos;  // single whitespace after maxval
  const std::size_t bps = maxval < 256 ? 1 : 2;
  const std::size_t need = w * h * channels * bps;
  if (pos > b.size() || b.size() - pos < need) {
    throw FormatError(Kind::kTruncated, name + ": truncated pixel data");
  }
  Tensor t({1, channels, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = pos + ((y * w + x) * channels + c) * bps;
        const double v = bps == 1 ? b[i] : static_cast<double>((b[i] << 8) | b[i + 1]);
        t.at(0, c, y, x) = v / static_cast<double>(maxval);
      }
    }
  }
  return t;
}

PgmRange write_pgm(const std::filesystem::path& path, const Tensor& t, std::size_t n,
                   std::size_t c) {
  const Shape& s = t.shape();
  auto plane = t.plane(n, c);
  PgmRange r{*std::min_element(plane.begin(), plane.end()),
             *std::max_element(plane.begin(), plane.end())};
  io::Bytes out;
  io::put_bytes(out, "P5\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n");
  for (double v : plane) {
    const double u = r.max > r.min ? (v - r.min) / (r.max - r.min) : 0.5;
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0)));
  }
  io::write_file(path, out);
  return r;
}

void write_pnm_unit(const std::filesystem::path& path, const Tensor& t) {
  const Shape& s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    throw ShapeError("write_pnm_unit: expected (1,1|3,H,W), got " + s.str());
  }
  io::Bytes out;
  io::put_bytes(out, std::string(s.c == 1 ? "P5" : "P6") + "\n" + std::to_string(s.w) + " " +
                         std::to_string(s.h) + "\n255\n");
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const double v = std::clamp(t.at(0, c, y, x), 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
    }
  }
  io::write_file(path, out);
}

Tensor read_image(const std::filesystem::path& path) {
  if (path.extension() == ".f64") return data::read_f64_blob(path);
  return read_pnm(path);
}

}  // namespace dnseg::image_io
