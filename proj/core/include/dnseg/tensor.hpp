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
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dnseg {

/// Extents of a dense (batch, channel, height, width) array.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const noexcept { return n * c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense 4-D array of doubles stored contiguously in row-major (n, c, h, w)
/// order. The universal value type for activations, weights and gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[offset(n, c, y, x)];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[offset(n, c, y, x)];
  }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // One (h, w) plane.
  std::span<double> plane(std::size_t n, std::size_t c) noexcept {
    return std::span<double>(data_).subspan(offset(n, c, 0, 0), shape_.plane());
  }
  std::span<const double> plane(std::size_t n, std::size_t c) const noexcept {
    return std::span<const double>(data_).subspan(offset(n, c, 0, 0), shape_.plane());
  }

  bool all_finite() const noexcept;
  void fill(double v) noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Elementwise helpers. Shapes must match exactly.
void add_inplace(Tensor& dst, const Tensor& src);
Tensor abs(const Tensor& t);
Tensor scaled(const Tensor& t, double k);
double max_abs(const Tensor& t);

/// Throws ShapeError unless `a` and `b` have identical shapes.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

// ---------------------------------------------------------------------------
// Differentiable primitives. Each forward has an explicit backward; callers
// hold whatever the backward needs.

enum class Padding { kZero, kReflect };

/// Static description of a 2-D convolution. Kernel extents are odd and the
/// padding is "same": (kernel - 1) / 2 on each side.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  Padding padding = Padding::kZero;

  std::size_t pad_h() const noexcept { return (kernel_h - 1) / 2; }
  std::size_t pad_w() const noexcept { return (kernel_w - 1) / 2; }
  Shape weight_shape() const noexcept { return {out_channels, in_channels, kernel_h, kernel_w}; }
  Shape output_shape(const Shape& input) const;
  void validate() const;
};

/// Mirror index into [0, n) without repeating the edge sample
/// (… 2 1 | 0 1 2 … n-1 | n-2 …). Any integer maps; n == 1 maps to 0.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) noexcept;

/// Pads every plane by (ph, pw) on each side.
Tensor pad2d(const Tensor& input, std::size_t ph, std::size_t pw, Padding mode);

/// Adjoint of pad2d: folds a padded gradient back onto the unpadded grid,
/// accumulating mirrored contributions for reflect padding.
Tensor pad2d_adjoint(const Tensor& grad_padded, const Shape& input_shape, std::size_t ph,
                     std::size_t pw, Padding mode);

/// Cross-correlation (the kernel is not flipped):
///   out[n,o,y,x] = bias[o] + sum_{i,ky,kx} w[o,i,ky,kx] * in_pad[n,i,y*s+ky,x*s+kx]
/// Accumulation order per output element is fixed: the bias first, then
/// (i, ky, kx) in row-major order.
Tensor conv2d_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                      const ConvSpec& spec);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  std::vector<double> bias;
};

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                          const ConvSpec& spec);

/// Flat indices (into the input tensor) of each pooled maximum.
using ArgmaxIndices = std::vector<std::size_t>;

struct PoolResult {
  Tensor output;
  ArgmaxIndices argmax;
};

/// 2x2 max pooling with stride 2. Ties go to the first element in row-major
/// order within the block.
PoolResult maxpool2_forward(const Tensor& input);
Tensor maxpool2_backward(const Tensor& grad_out, const ArgmaxIndices& argmax,
                         const Shape& input_shape);

/// Nearest-neighbour 2x replication.
Tensor upsample2_forward(const Tensor& input);
Tensor upsample2_backward(const Tensor& grad_out);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits after the first `channels_a` channels. Also the backward of concat.
std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t channels_a);

Tensor relu_forward(const Tensor& input);
/// Passes gradient where input > 0; the subgradient at 0 is 0.
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

}  // namespace dnseg
