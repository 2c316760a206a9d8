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
#include <vector>

#include "dnseg/tensor.hpp"

namespace dnseg::divnorm {

inline constexpr double kBetaMin = 1e-6;
inline constexpr std::size_t kDefaultWindow = 5;

/// Parameters of one generalized divisive normalization layer
///
///   y[i,p] = z[i,p] / (beta[i] + sum_{j, d in window} gamma[i,j,d] * |z[j,p+d]|)
///
/// The pooling exponent and the outer exponent are both fixed at 1. The
/// interaction kernel is dense over channels and spatially windowed: the same
/// (C, C, k, k) kernel applies at every position, with reflect padding at the
/// borders.
struct DnParams {
  std::vector<double> beta;  // [C], >= kBetaMin
  Tensor gamma;              // (C, C, k, k), >= 0

  static constexpr double kAlpha = 1.0;
  static constexpr double kEpsilon = 1.0;

  /// Default initialization: beta = 1, self term gamma[i,i,center] = 0.1,
  /// every other entry 0.01 / (C k^2).
  static DnParams initialize(std::size_t channels, std::size_t window = kDefaultWindow);
  /// beta = 1, gamma = 0: the layer is the identity.
  static DnParams identity(std::size_t channels, std::size_t window = kDefaultWindow);

  std::size_t channels() const noexcept { return beta.size(); }
  std::size_t window() const noexcept { return gamma.shape().h; }
  std::size_t parameter_count() const noexcept { return beta.size() + gamma.size(); }

  /// Throws ConfigError/ShapeError if any invariant is violated.
  void validate() const;
  /// Clamps beta to kBetaMin and gamma to 0.
  void project() noexcept;
  bool satisfies_constraints() const noexcept;
};

/// How the normalization pool is accumulated. Both produce the same sums up
/// to rounding; kChannelBlocked is the fast path used everywhere by default.
enum class PoolStrategy {
  kChannelBlocked,  // plane-wise accumulation per (i, j, tap), shared with conv2d
  kNaive,           // per-output-position direct evaluation of the window sum
};

struct DnForward {
  Tensor y;
  Tensor denom;  // D[i,p], cached for the backward pass
};

DnForward dn_forward(const Tensor& z, const DnParams& params,
                     PoolStrategy strategy = PoolStrategy::kChannelBlocked);

struct DnGrads {
  Tensor z;
  std::vector<double> beta;
  Tensor gamma;
};

/// Analytic gradients of dn_forward given the cached denominator. With
/// g = grad_y and D the denominator,
///   dL/dz[j,q]  = g[j,q]/D[j,q] - sign(z[j,q]) sum_{i,p} gamma[i,j,q-p] g[i,p] z[i,p]/D[i,p]^2
///   dL/dbeta[i] = -sum_p g[i,p] z[i,p]/D[i,p]^2
///   dL/dgamma[i,j,d] = -sum_p g[i,p] z[i,p] |z[j,p+d]| / D[i,p]^2
/// with sign(0) = 0 and reflect-padding routing of the pool term.
DnGrads dn_backward(const Tensor& z, const DnParams& params, const Tensor& denom,
                    const Tensor& grad_y, PoolStrategy strategy = PoolStrategy::kChannelBlocked);

}  // namespace dnseg::divnorm
