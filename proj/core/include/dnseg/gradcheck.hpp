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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dnseg::gradcheck {

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// gradient is ~0 from being dominated by finite-difference round-off.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central difference (f(x + h) - f(x - h)) / 2h for every element of `x`,
/// evaluated in place. Entries where `skip` returns true are left as NaN.
std::vector<double> numeric_gradient(std::span<double> x, const std::function<double()>& f,
                                     double step,
                                     const std::function<bool(std::size_t)>& skip = {});

struct Comparison {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// Compares analytic against numeric, ignoring NaN numeric entries.
Comparison compare(std::span<const double> analytic, std::span<const double> numeric,
                   double floor = 1e-6);

struct OpResult {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct Options {
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Test hook: corrupts the analytic gradient of the named op.
  std::optional<std::string> inject_fault;
};

/// Names of the ops run_all checks, in order.
std::vector<std::string> op_names();

/// Checks every primitive backward (conv2d with zero and reflect padding,
/// maxpool, upsample, concat, ReLU, MAE), the DN layer with respect to its
/// input, beta and gamma under both pooling strategies, and an end-to-end
/// tiny dn4 U-Net, against central finite differences.
std::vector<OpResult> run_all(const Options& options);

}  // namespace dnseg::gradcheck
