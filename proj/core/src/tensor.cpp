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

#include "dnseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "dnseg/error.hpp"

namespace dnseg {

void invariant_failure(const char* expr, const char* file, int line) {
  std::fprintf(stderr, "dnseg: internal invariant violated: %s (%s:%d)\n", expr, file, line);
  std::abort();
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

void add_inplace(Tensor& dst, const Tensor& src) {
  require_same_shape(dst.shape(), src.shape(), "add_inplace");
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Tensor abs(const Tensor& t) {
  Tensor out(t.shape());
  auto o = out.data();
  auto s = t.data();
  for (std::size_t i = 0; i < s.size(); ++i) o[i] = std::fabs(s[i]);
  return out;
}

Tensor scaled(const Tensor& t, double k) {
  Tensor out(t.shape());
  auto o = out.data();
  auto s = t.data();
  for (std::size_t i = 0; i < s.size(); ++i) o[i] = k * s[i];
  return out;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::fabs(v));
  return m;
}

// ---------------------------------------------------------------------------
// Convolution

Shape ConvSpec::output_shape(const Shape& input) const {
  const std::size_t hp = input.h + 2 * pad_h();
  const std::size_t wp = input.w + 2 * pad_w();
  if (hp < kernel_h || wp < kernel_w) {
    throw ShapeError("conv2d: input " + input.str() + " too small for kernel " +
                     std::to_string(kernel_h) + "x" + std::to_string(kernel_w));
  }
  return {input.n, out_channels, (hp - kernel_h) / stride + 1, (wp - kernel_w) / stride + 1};
}

void ConvSpec::validate() const {
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " + std::to_string(kernel_h) + "x" +
                     std::to_string(kernel_w));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (in_channels == 0 || out_channels == 0) throw ShapeError("conv2d: zero channels");
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) noexcept {
  if (n <= 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - m);
}

Tensor pad2d(const Tensor& input, std::size_t ph, std::size_t pw, Padding mode) {
  const Shape& s = input.shape();
  Tensor out({s.n, s.c, s.h + 2 * ph, s.w + 2 * pw});
  const std::size_t wp = s.w + 2 * pw;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto src = input.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t py = 0; py < s.h + 2 * ph; ++py) {
        const auto y = static_cast<std::ptrdiff_t>(py) - static_cast<std::ptrdiff_t>(ph);
        double* row = dst.data() + py * wp;
        if (mode == Padding::kZero) {
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(s.h)) continue;
          std::copy_n(src.data() + y * s.w, s.w, row + pw);
        } else {
          const std::size_t sy = reflect_index(y, s.h);
          const double* srow = src.data() + sy * s.w;
          std::copy_n(srow, s.w, row + pw);
          for (std::size_t e = 0; e < pw; ++e) {
            const auto x = static_cast<std::ptrdiff_t>(e) - static_cast<std::ptrdiff_t>(pw);
            row[e] = srow[reflect_index(x, s.w)];
            row[pw + s.w + e] = srow[reflect_index(static_cast<std::ptrdiff_t>(s.w + e), s.w)];
          }
        }
      }
    }
  }
  return out;
}

Tensor pad2d_adjoint(const Tensor& grad_padded, const Shape& input_shape, std::size_t ph,
                     std::size_t pw, Padding mode) {
  const Shape& s = input_shape;
  require_same_shape(grad_padded.shape(), {s.n, s.c, s.h + 2 * ph, s.w + 2 * pw},
                     "pad2d_adjoint");
  Tensor out(s);
  const std::size_t wp = s.w + 2 * pw;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto src = grad_padded.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t py = 0; py < s.h + 2 * ph; ++py) {
        const auto y = static_cast<std::ptrdiff_t>(py) - static_cast<std::ptrdiff_t>(ph);
        const double* row = src.data() + py * wp;
        if (mode == Padding::kZero) {
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(s.h)) continue;
          double* drow = dst.data() + y * s.w;
          for (std::size_t x = 0; x < s.w; ++x) drow[x] += row[x + pw];
        } else {
          double* drow = dst.data() + reflect_index(y, s.h) * s.w;
          for (std::size_t x = 0; x < s.w; ++x) drow[x] += row[x + pw];
          for (std::size_t e = 0; e < pw; ++e) {
            const auto x = static_cast<std::ptrdiff_t>(e) - static_cast<std::ptrdiff_t>(pw);
            drow[reflect_index(x, s.w)] += row[e];
            drow[reflect_index(static_cast<std::ptrdiff_t>(s.w + e), s.w)] += row[pw + s.w + e];
          }
        }
      }
    }
  }
  return out;
}

namespace {

void check_conv_args(const Tensor& input, const Tensor& weights, const ConvSpec& spec) {
  spec.validate();
  if (input.shape().c != spec.in_channels) {
    throw ShapeError("conv2d: input " + input.shape().str() + " does not have " +
                     std::to_string(spec.in_channels) + " channels required by weights " +
                     weights.shape().str());
  }
  if (!(weights.shape() == spec.weight_shape())) {
    throw ShapeError("conv2d: weights " + weights.shape().str() + " do not match spec " +
                     spec.weight_shape().str() + " for input " + input.shape().str());
  }
}

// Avoids a copy when no padding is needed.
struct Padded {
  Tensor storage;
  const Tensor* view = nullptr;
};

Padded padded_input(const Tensor& input, const ConvSpec& spec) {
  Padded p;
  if (spec.pad_h() == 0 && spec.pad_w() == 0) {
    p.view = &input;
  } else {
    p.storage = pad2d(input, spec.pad_h(), spec.pad_w(), spec.padding);
    p.view = &p.storage;
  }
  return p;
}

}  // namespace

namespace {

// Column matrix of one padded image: row k = (i, ky, kx) in row-major order,
// column p = output position.
void im2col(const Tensor& padded, std::size_t n, const ConvSpec& spec, const Shape& os,
            std::vector<double>& col) {
  const std::size_t wp = padded.shape().w, st = spec.stride, P = os.plane();
  col.resize(spec.in_channels * spec.kernel_h * spec.kernel_w * P);
  double* dst = col.data();
  for (std::size_t i = 0; i < spec.in_channels; ++i) {
    const double* src = padded.plane(n, i).data();
    for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
        for (std::size_t y = 0; y < os.h; ++y) {
          const double* s = src + (y * st + ky) * wp + kx;
          if (st == 1) {
            std::copy_n(s, os.w, dst);
          } else {
            for (std::size_t x = 0; x < os.w; ++x) dst[x] = s[x * st];
          }
          dst += os.w;
        }
      }
    }
  }
}

// Adjoint of im2col for rows [k0, k0 + count) of the column matrix.
void col2im_add(const double* rows, std::size_t k0, std::size_t count, const ConvSpec& spec,
                const Shape& os, Tensor& grad_padded, std::size_t n) {
  const std::size_t wp = grad_padded.shape().w, st = spec.stride;
  const std::size_t kk = spec.kernel_h * spec.kernel_w;
  const double* src = rows;
  for (std::size_t k = k0; k < k0 + count; ++k) {
    const std::size_t ky = (k % kk) / spec.kernel_w, kx = k % spec.kernel_w;
    double* dst = grad_padded.plane(n, k / kk).data();
    for (std::size_t y = 0; y < os.h; ++y) {
      double* __restrict d = dst + (y * st + ky) * wp + kx;
      if (st == 1) {
        for (std::size_t x = 0; x < os.w; ++x) d[x] += src[x];
      } else {
        for (std::size_t x = 0; x < os.w; ++x) d[x * st] += src[x];
      }
      src += os.w;
    }
  }
}

using V8 = double __attribute__((vector_size(64)));

// Column-matrix rows whose gradient is formed and scattered together.
constexpr std::size_t kRowBlock = 8;

// C (M x N, row stride ldc) += A (M x L) * B (L x N, row stride ldb), where
// A(m, l) = a[m * am + l * al]. Every C element accumulates its L products
// in increasing l, whatever the blocking, so results are reproducible.
void gemm_acc(std::size_t M, std::size_t N, std::size_t L, const double* a, std::size_t am,
              std::size_t al, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  constexpr std::size_t MR = 4, NR = 16;
  for (std::size_t n0 = 0; n0 < N; n0 += NR) {
    const std::size_t nr = std::min(NR, N - n0);
    for (std::size_t m0 = 0; m0 < M; m0 += MR) {
      const std::size_t mr = std::min(MR, M - m0);
      if (mr == MR && nr == NR) {
        V8 acc[MR][2];
        for (std::size_t i = 0; i < MR; ++i) {
          std::memcpy(&acc[i][0], c + (m0 + i) * ldc + n0, sizeof(V8));
          std::memcpy(&acc[i][1], c + (m0 + i) * ldc + n0 + 8, sizeof(V8));
        }
        const double* a0 = a + m0 * am;
        for (std::size_t l = 0; l < L; ++l) {
          V8 b0, b1;
          std::memcpy(&b0, b + l * ldb + n0, sizeof(V8));
          std::memcpy(&b1, b + l * ldb + n0 + 8, sizeof(V8));
          const double* al0 = a0 + l * al;
          const double w0 = al0[0], w1 = al0[am], w2 = al0[2 * am], w3 = al0[3 * am];
          acc[0][0] += w0 * b0;
          acc[0][1] += w0 * b1;
          acc[1][0] += w1 * b0;
          acc[1][1] += w1 * b1;
          acc[2][0] += w2 * b0;
          acc[2][1] += w2 * b1;
          acc[3][0] += w3 * b0;
          acc[3][1] += w3 * b1;
        }
        for (std::size_t i = 0; i < MR; ++i) {
          std::memcpy(c + (m0 + i) * ldc + n0, &acc[i][0], sizeof(V8));
          std::memcpy(c + (m0 + i) * ldc + n0 + 8, &acc[i][1], sizeof(V8));
        }
      } else {
        for (std::size_t i = 0; i < mr; ++i) {
          double* __restrict ci = c + (m0 + i) * ldc + n0;
          for (std::size_t l = 0; l < L; ++l) {
            const double av = a[(m0 + i) * am + l * al];
            const double* __restrict bl = b + l * ldb + n0;
            for (std::size_t j = 0; j < nr; ++j) ci[j] += av * bl[j];
          }
        }
      }
    }
  }
}

double hsum(const V8& v) {
  return ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
}

// C (M x N) += A (M x L) * B^T where B is N x L, both row-major. Each entry
// is an 8-lane dot product reduced in a fixed order.
void gemm_nt_acc(std::size_t M, std::size_t N, std::size_t L, const double* a, const double* b,
                 double* c) {
  constexpr std::size_t MR = 4, NR = 4;
  const std::size_t L8 = L - L % 8;
  auto tail = [&](std::size_t i, std::size_t j) {
    double t = 0.0;
    for (std::size_t l = L8; l < L; ++l) t += a[i * L + l] * b[j * L + l];
    return t;
  };
  for (std::size_t m0 = 0; m0 < M; m0 += MR) {
    const std::size_t mr = std::min(MR, M - m0);
    for (std::size_t n0 = 0; n0 < N; n0 += NR) {
      const std::size_t nr = std::min(NR, N - n0);
      V8 acc[MR][NR] = {};
      for (std::size_t l = 0; l < L8; l += 8) {
        V8 av[MR], bv[NR];
        for (std::size_t i = 0; i < mr; ++i) std::memcpy(&av[i], a + (m0 + i) * L + l, sizeof(V8));
        for (std::size_t j = 0; j < nr; ++j) std::memcpy(&bv[j], b + (n0 + j) * L + l, sizeof(V8));
        if (mr == MR && nr == NR) {
          for (std::size_t i = 0; i < MR; ++i) {
            for (std::size_t j = 0; j < NR; ++j) acc[i][j] += av[i] * bv[j];
          }
        } else {
          for (std::size_t i = 0; i < mr; ++i) {
            for (std::size_t j = 0; j < nr; ++j) acc[i][j] += av[i] * bv[j];
          }
        }
      }
      for (std::size_t i = 0; i < mr; ++i) {
        for (std::size_t j = 0; j < nr; ++j) {
          c[(m0 + i) * N + n0 + j] += hsum(acc[i][j]) + tail(m0 + i, n0 + j);
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                      const ConvSpec& spec) {
  check_conv_args(input, weights, spec);
  if (!bias.empty() && bias.size() != spec.out_channels) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) + " vs " +
                     std::to_string(spec.out_channels) + " output channels");
  }
  const Shape os = spec.output_shape(input.shape());
  const Padded pad = padded_input(input, spec);
  const std::size_t K = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const std::size_t P = os.plane();
  const double* W = weights.data().data();

  Tensor out(os);
  std::vector<double> col;
  for (std::size_t n = 0; n < os.n; ++n) {
    im2col(*pad.view, n, spec, os, col);
    double* dst = out.plane(n, 0).data();
    for (std::size_t o = 0; o < os.c; ++o) {
      std::fill_n(dst + o * P, P, bias.empty() ? 0.0 : bias[o]);
    }
    gemm_acc(os.c, P, K, W, K, 1, col.data(), P, dst, P);
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                          const ConvSpec& spec) {
  check_conv_args(input, weights, spec);
  const Shape os = spec.output_shape(input.shape());
  require_same_shape(grad_out.shape(), os, "conv2d_backward grad_out");
  const Padded pad = padded_input(input, spec);
  const std::size_t K = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const std::size_t P = os.plane();
  const double* W = weights.data().data();

  ConvGrads g;
  g.bias.assign(spec.out_channels, 0.0);
  g.weights = Tensor(weights.shape());
  double* gW = g.weights.data().data();
  Tensor grad_padded(pad.view->shape());

  std::vector<double> col, gcol;
  for (std::size_t n = 0; n < os.n; ++n) {
    im2col(*pad.view, n, spec, os, col);
    const double* go = grad_out.plane(n, 0).data();
    for (std::size_t o = 0; o < os.c; ++o) {
      double bsum = 0.0;
      for (std::size_t p = 0; p < P; ++p) bsum += go[o * P + p];
      g.bias[o] += bsum;
    }
    // dW += dY col^T ; dcol = W^T dY
    gemm_nt_acc(os.c, K, P, go, col.data(), gW);
    for (std::size_t k0 = 0; k0 < K; k0 += kRowBlock) {
      const std::size_t kr = std::min(kRowBlock, K - k0);
      gcol.assign(kr * P, 0.0);
      gemm_acc(kr, P, os.c, W + k0, 1, K, go, P, gcol.data(), P);
      col2im_add(gcol.data(), k0, kr, spec, os, grad_padded, n);
    }
  }

  if (spec.pad_h() == 0 && spec.pad_w() == 0) {
    g.input = std::move(grad_padded);
  } else {
    g.input = pad2d_adjoint(grad_padded, input.shape(), spec.pad_h(), spec.pad_w(), spec.padding);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Pooling / resampling

PoolResult maxpool2_forward(const Tensor& input) {
  const Shape& s = input.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("maxpool2: spatial dims must be even, got " + s.str());
  }
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  PoolResult r{Tensor(os), ArgmaxIndices(os.numel())};
  std::size_t k = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x, ++k) {
          std::size_t best = input.offset(n, c, 2 * y, 2 * x);
          const std::size_t cand[3] = {best + 1, best + s.w, best + s.w + 1};
          for (std::size_t idx : cand) {
            if (input[idx] > input[best]) best = idx;
          }
          r.output[k] = input[best];
          r.argmax[k] = best;
        }
      }
    }
  }
  return r;
}

Tensor maxpool2_backward(const Tensor& grad_out, const ArgmaxIndices& argmax,
                         const Shape& input_shape) {
  DNSEG_INVARIANT(argmax.size() == grad_out.size());
  Tensor g(input_shape);
  for (std::size_t k = 0; k < argmax.size(); ++k) {
    DNSEG_INVARIANT(argmax[k] < g.size());
    g[argmax[k]] += grad_out[k];
  }
  return g;
}

Tensor upsample2_forward(const Tensor& input) {
  const Shape& s = input.shape();
  Tensor out({s.n, s.c, 2 * s.h, 2 * s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto src = input.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t y = 0; y < 2 * s.h; ++y) {
        const double* srow = src.data() + (y / 2) * s.w;
        double* drow = dst.data() + y * 2 * s.w;
        for (std::size_t x = 0; x < 2 * s.w; ++x) drow[x] = srow[x / 2];
      }
    }
  }
  return out;
}

Tensor upsample2_backward(const Tensor& grad_out) {
  const Shape& s = grad_out.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("upsample2_backward: grad dims must be even, got " + s.str());
  }
  Tensor g({s.n, s.c, s.h / 2, s.w / 2});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto src = grad_out.plane(n, c);
      auto dst = g.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y) {
        const double* srow = src.data() + y * s.w;
        double* drow = dst.data() + (y / 2) * (s.w / 2);
        for (std::size_t x = 0; x < s.w; ++x) drow[x / 2] += srow[x];
      }
    }
  }
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: incompatible shapes " + sa.str() + " and " + sb.str());
  }
  Tensor out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t pa = sa.c * sa.plane();
  const std::size_t pb = sb.c * sb.plane();
  for (std::size_t n = 0; n < sa.n; ++n) {
    double* dst = out.data().data() + n * (pa + pb);
    std::copy_n(a.data().data() + n * pa, pa, dst);
    std::copy_n(b.data().data() + n * pb, pb, dst + pa);
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t channels_a) {
  const Shape& s = t.shape();
  if (channels_a > s.c) {
    throw ShapeError("split_channels: cannot take " + std::to_string(channels_a) +
                     " channels from " + s.str());
  }
  Tensor a({s.n, channels_a, s.h, s.w});
  Tensor b({s.n, s.c - channels_a, s.h, s.w});
  const std::size_t pa = a.shape().c * s.plane();
  const std::size_t pb = b.shape().c * s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* src = t.data().data() + n * (pa + pb);
    std::copy_n(src, pa, a.data().data() + n * pa);
    std::copy_n(src + pa, pb, b.data().data() + n * pb);
  }
  return {std::move(a), std::move(b)};
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  auto s = input.data();
  auto o = out.data();
  for (std::size_t i = 0; i < s.size(); ++i) o[i] = s[i] > 0.0 ? s[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require_same_shape(input.shape(), grad_out.shape(), "relu_backward");
  Tensor g(input.shape());
  auto s = input.data();
  auto go = grad_out.data();
  auto o = g.data();
  for (std::size_t i = 0; i < s.size(); ++i) o[i] = s[i] > 0.0 ? go[i] : 0.0;
  return g;
}

}  // namespace dnseg
