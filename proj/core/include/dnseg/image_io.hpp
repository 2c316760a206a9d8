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

#include <filesystem>

#include "dnseg/tensor.hpp"

namespace dnseg::image_io {

/// Binary PGM (P5) or PPM (P6), 8 or 16 bit. Returns (1, 1, H, W) or
/// (1, 3, H, W) with values scaled to [0, 1].
Tensor read_pnm(const std::filesystem::path& path);

/// Writes one plane as 8-bit binary PGM after a linear min/max rescale to
/// 0..255. A constant plane is written as mid-gray.
struct PgmRange {
  double min = 0.0;
  double max = 0.0;
};
PgmRange write_pgm(const std::filesystem::path& path, const Tensor& t, std::size_t n = 0,
                   std::size_t c = 0);

/// Writes a (1, 1|3, H, W) tensor with values in [0, 1] as PGM/PPM without
/// rescaling (values are clamped).
void write_pnm_unit(const std::filesystem::path& path, const Tensor& t);

/// Loads an image for the tools: dataset `.f64` blobs or PGM/PPM files.
Tensor read_image(const std::filesystem::path& path);

}  // namespace dnseg::image_io
