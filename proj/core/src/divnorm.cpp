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

#include "dnseg/divnorm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dnseg/error.hpp"

namespace dnseg::divnorm {

namespace {

ConvSpec pool_spec(const DnParams& p) {
  return {p.channels(), p.channels(), p.window(), p.window(), 1, Padding::kReflect};
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_input(const Tensor& z, const DnParams& params) {
  params.validate();
  if (z.shape().c != params.channels()) {
    throw ShapeError("dn: input " + z.shape().str() + " has " + std::to_string(z.shape().c) +
                     " channels, layer expects " + std::to_string(params.channels()));
  }
  if (!z.all_finite()) throw NumericalError("dn: non-finite input");
}

Tensor naive_pool(const Tensor& z, const DnParams& p) {
  const Shape& s = z.shape();
  const std::size_t k = p.window();
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  Tensor d(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.c; ++i) {
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
          double acc = p.beta[i];
          for (std::size_t j = 0; j < s.c; ++j) {
            for (std::size_t dy = 0; dy < k; ++dy) {
              const std::size_t yy =
                  reflect_index(static_cast<std::ptrdiff_t>(y + dy) - r, s.h);
              for (std::size_t dx = 0; dx < k; ++dx) {
                const std::size_t xx =
                    reflect_index(static_cast<std::ptrdiff_t>(x + dx) - r, s.w);
                acc += p.gamma.at(i, j, dy, dx) * std::fabs(z.at(n, j, yy, xx));
              }
            }
          }
          d.at(n, i, y, x) = acc;
        }
      }
    }
  }
  return d;
}

}  // namespace

DnParams DnParams::initialize(std::size_t channels, std::size_t window) {
  DnParams p;
  p.beta.assign(channels, 1.0);
  const double off = 0.01 / static_cast<double>(channels * window * window);
  p.gamma = Tensor({channels, channels, window, window}, off);
  for (std::size_t i = 0; i < channels; ++i) p.gamma.at(i, i, window / 2, window / 2) = 0.1;
  return p;
}

DnParams DnParams::identity(std::size_t channels, std::size_t window) {
  DnParams p;
  p.beta.assign(channels, 1.0);
  p.gamma = Tensor({channels, channels, window, window}, 0.0);
  return p;
}

void DnParams::validate() const {
  const Shape& g = gamma.shape();
  const std::size_t c = beta.size();
  if (c == 0) throw ConfigError("dn: zero channels");
  if (g.n != c || g.c != c || g.h != g.w || g.h % 2 == 0) {
    throw ShapeError("dn: gamma shape " + g.str() + " incompatible with " + std::to_string(c) +
                     " channels and an odd square window");
  }
  if (!satisfies_constraints()) {
    throw ConfigError("dn: parameters violate beta >= 1e-6, gamma >= 0 or are non-finite");
  }
}

void DnParams::project() noexcept {
  for (double& b : beta) b = std::max(b, kBetaMin);
  for (double& g : gamma.data()) g = std::max(g, 0.0);
}

bool DnParams::satisfies_constraints() const noexcept {
  const bool beta_ok = std::all_of(beta.begin(), beta.end(),
                                   [](double b) { return std::isfinite(b) && b >= kBetaMin; });
  const auto g = gamma.data();
  const bool gamma_ok =
      std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v) && v >= 0.0; });
  return beta_ok && gamma_ok;
}

DnForward dn_forward(const Tensor& z, const DnParams& params, PoolStrategy strategy) {
  check_input(z, params);
  DnForward r;
  r.denom = strategy == PoolStrategy::kNaive
                ? naive_pool(z, params)
                : conv2d_forward(abs(z), params.gamma, params.beta, pool_spec(params));
  r.y = Tensor(z.shape());
  auto zd = z.data();
  auto dd = r.denom.data();
  auto yd = r.y.data();
  for (std::size_t k = 0; k < zd.size(); ++k) yd[k] = zd[k] / dd[k];
  return r;
}

DnGrads dn_backward(const Tensor& z, const DnParams& params, const Tensor& denom,
                    const Tensor& grad_y, PoolStrategy strategy) {
  check_input(z, params);
  require_same_shape(denom.shape(), z.shape(), "dn_backward denominator cache");
  require_same_shape(grad_y.shape(), z.shape(), "dn_backward grad_y");
  const Shape& s = z.shape();

  // Gradient with respect to the denominator.
  Tensor grad_d(s);
  {
    auto g = grad_y.data();
    auto zd = z.data();
    auto dd = denom.data();
    auto gd = grad_d.data();
    for (std::size_t k = 0; k < zd.size(); ++k) gd[k] = -g[k] * zd[k] / (dd[k] * dd[k]);
  }

  DnGrads out;
  Tensor grad_abs;
  if (strategy == PoolStrategy::kChannelBlocked) {
    ConvGrads cg = conv2d_backward(abs(z), params.gamma, grad_d, pool_spec(params));
    grad_abs = std::move(cg.input);
    out.gamma = std::move(cg.weights);
    out.beta = std::move(cg.bias);
  } else {
    const std::size_t k = params.window();
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    grad_abs = Tensor(s);
    out.gamma = Tensor(params.gamma.shape());
    out.beta.assign(s.c, 0.0);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t i = 0; i < s.c; ++i) {
        for (std::size_t y = 0; y < s.h; ++y) {
          for (std::size_t x = 0; x < s.w; ++x) {
            const double gd = grad_d.at(n, i, y, x);
            out.beta[i] += gd;
            for (std::size_t j = 0; j < s.c; ++j) {
              for (std::size_t dy = 0; dy < k; ++dy) {
                const std::size_t yy =
                    reflect_index(static_cast<std::ptrdiff_t>(y + dy) - r, s.h);
                for (std::size_t dx = 0; dx < k; ++dx) {
                  const std::size_t xx =
                      reflect_index(static_cast<std::ptrdiff_t>(x + dx) - r, s.w);
                  out.gamma.at(i, j, dy, dx) += gd * std::fabs(z.at(n, j, yy, xx));
                  grad_abs.at(n, j, yy, xx) += gd * params.gamma.at(i, j, dy, dx);
                }
              }
            }
          }
        }
      }
    }
  }

  out.z = Tensor(s);
  auto g = grad_y.data();
  auto zd = z.data();
  auto dd = denom.data();
  auto ga = grad_abs.data();
  auto gz = out.z.data();
  for (std::size_t k = 0; k < zd.size(); ++k) gz[k] = g[k] / dd[k] + sign(zd[k]) * ga[k];
  return out;
}

}  // namespace dnseg::divnorm
