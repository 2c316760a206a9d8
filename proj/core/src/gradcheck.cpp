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

#include "dnseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dnseg/divnorm.hpp"
#include "dnseg/rng.hpp"
#include "dnseg/tensor.hpp"
#include "dnseg/train.hpp"
#include "dnseg/unet.hpp"

namespace dnseg::gradcheck {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

std::vector<double> numeric_gradient(std::span<double> x, const std::function<double()>& f,
                                     double step, const std::function<bool(std::size_t)>& skip) {
  std::vector<double> g(x.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (skip && skip(i)) continue;
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f();
    x[i] = orig - step;
    const double fm = f();
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

Comparison compare(std::span<const double> analytic, std::span<const double> numeric,
                   double floor) {
  Comparison c;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (std::isnan(numeric[i])) {
      ++c.skipped;
      continue;
    }
    c.max_rel_error = std::max(c.max_rel_error, relative_error(analytic[i], numeric[i], floor));
    ++c.checked;
  }
  return c;
}

namespace {

void randomize(std::span<double> v, Rng& rng, double lo, double hi) {
  for (double& x : v) x = rng.uniform(lo, hi);
}

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  randomize(t.data(), rng, lo, hi);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

class Checker {
 public:
  explicit Checker(const Options& o) : opt_(o) {}

  // Records one analytic/numeric pair under `op`.
  void add(const std::string& op, std::vector<double> analytic, std::span<const double> numeric) {
    if (opt_.inject_fault && *opt_.inject_fault == op && !analytic.empty()) {
      analytic[0] += 0.5 + std::fabs(analytic[0]);
    }
    const Comparison c = compare(analytic, numeric);
    OpResult* r = find(op);
    r->max_rel_error = std::max(r->max_rel_error, c.max_rel_error);
    r->checked += c.checked;
  }

  std::vector<OpResult> finish() {
    for (auto& r : results_) r.passed = r.checked > 0 && r.max_rel_error < opt_.tolerance;
    return results_;
  }

  double step() const { return opt_.step; }

 private:
  OpResult* find(const std::string& op) {
    for (auto& r : results_) {
      if (r.op == op) return &r;
    }
    results_.push_back({op, 0.0, 0, false});
    return &results_.back();
  }

  Options opt_;
  std::vector<OpResult> results_;
};

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

void check_conv(Checker& ck, Rng& rng, const std::string& op, Padding pad, std::size_t stride) {
  const ConvSpec spec{2, 3, 3, 3, stride, pad};
  Tensor x = random_tensor({1, 2, 5, 5}, rng);
  Tensor w = random_tensor(spec.weight_shape(), rng);
  std::vector<double> b(3);
  randomize(b, rng, -1.0, 1.0);
  const Tensor r = random_tensor(spec.output_shape(x.shape()), rng);
  auto f = [&] { return dot(r, conv2d_forward(x, w, b, spec)); };
  const ConvGrads g = conv2d_backward(x, w, r, spec);
  ck.add(op, to_vec(g.input.data()), numeric_gradient(x.data(), f, ck.step()));
  ck.add(op, to_vec(g.weights.data()), numeric_gradient(w.data(), f, ck.step()));
  ck.add(op, g.bias, numeric_gradient(b, f, ck.step()));
}

void check_maxpool(Checker& ck, Rng& rng) {
  // Distinct values spaced far beyond the step: no ties within +-h.
  Tensor x({1, 2, 4, 4});
  std::vector<double> vals(x.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<double>(i) / 16.0 - 1.0;
  for (std::size_t i = vals.size(); i > 1; --i) std::swap(vals[i - 1], vals[rng.index(i)]);
  std::copy(vals.begin(), vals.end(), x.data().begin());
  const Tensor r = random_tensor({1, 2, 2, 2}, rng);
  auto f = [&] { return dot(r, maxpool2_forward(x).output); };
  const PoolResult p = maxpool2_forward(x);
  const Tensor g = maxpool2_backward(r, p.argmax, x.shape());
  ck.add("maxpool2", to_vec(g.data()), numeric_gradient(x.data(), f, ck.step()));
}

void check_upsample(Checker& ck, Rng& rng) {
  Tensor x = random_tensor({1, 2, 3, 3}, rng);
  const Tensor r = random_tensor({1, 2, 6, 6}, rng);
  auto f = [&] { return dot(r, upsample2_forward(x)); };
  ck.add("upsample2", to_vec(upsample2_backward(r).data()), numeric_gradient(x.data(), f, ck.step()));
}

void check_concat(Checker& ck, Rng& rng) {
  Tensor a = random_tensor({1, 2, 3, 3}, rng);
  Tensor b = random_tensor({1, 1, 3, 3}, rng);
  const Tensor r = random_tensor({1, 3, 3, 3}, rng);
  auto f = [&] { return dot(r, concat_channels(a, b)); };
  auto [ga, gb] = split_channels(r, 2);
  ck.add("concat", to_vec(ga.data()), numeric_gradient(a.data(), f, ck.step()));
  ck.add("concat", to_vec(gb.data()), numeric_gradient(b.data(), f, ck.step()));
}

void check_relu(Checker& ck, Rng& rng) {
  Tensor x = random_tensor({1, 2, 4, 4}, rng);
  for (double& v : x.data()) {
    if (std::fabs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
  }
  const Tensor r = random_tensor(x.shape(), rng);
  auto f = [&] { return dot(r, relu_forward(x)); };
  ck.add("relu", to_vec(relu_backward(x, r).data()), numeric_gradient(x.data(), f, ck.step()));
}

void check_mae(Checker& ck, Rng& rng) {
  const std::size_t K = 3;
  data::LabelMap labels(2, 4, 4);
  for (auto& l : labels.values) l = static_cast<std::uint16_t>(rng.index(K));
  Tensor logits = random_tensor({2, K, 4, 4}, rng, -0.5, 1.5);
  // Keep residuals away from the kink at zero.
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < K; ++c) {
      for (std::size_t p = 0; p < 16; ++p) {
        double& v = logits[logits.offset(n, c, 0, 0) + p];
        const double t = labels.values[n * 16 + p] == c ? 1.0 : 0.0;
        if (std::fabs(v - t) < 1e-2) v = t + 0.05;
      }
    }
  }
  auto f = [&] { return train::mae_loss(logits, labels).loss; };
  ck.add("mae_loss", to_vec(train::mae_loss(logits, labels).grad.data()),
         numeric_gradient(logits.data(), f, ck.step()));
}

void check_dn(Checker& ck, Rng& rng, const std::string& op, divnorm::PoolStrategy strategy) {
  const std::size_t C = 3, k = 5;
  Tensor z = random_tensor({1, C, 8, 8}, rng);
  divnorm::DnParams p;
  p.beta.resize(C);
  randomize(p.beta, rng, 0.2, 1.2);
  p.gamma = random_tensor({C, C, k, k}, rng, 0.0, 0.1);
  const Tensor r = random_tensor(z.shape(), rng);
  auto f = [&] { return dot(r, divnorm::dn_forward(z, p, strategy).y); };
  const auto fwd = divnorm::dn_forward(z, p, strategy);
  const auto g = divnorm::dn_backward(z, p, fwd.denom, r, strategy);
  // |z| is not differentiable at 0; stay out of a band around it.
  const double band = std::max(1e-3, 10.0 * ck.step());
  auto near_zero = [&](std::size_t i) { return std::fabs(z[i]) < band; };
  ck.add(op + ".z", to_vec(g.z.data()), numeric_gradient(z.data(), f, ck.step(), near_zero));
  ck.add(op + ".beta", g.beta, numeric_gradient(p.beta, f, ck.step()));
  ck.add(op + ".gamma", to_vec(g.gamma.data()), numeric_gradient(p.gamma.data(), f, ck.step()));
}

void check_unet(Checker& ck, Rng& rng, std::uint64_t seed) {
  unet::UNetConfig cfg;
  cfg.in_channels = 3;
  cfg.num_classes = 3;
  cfg.encoder_channels = {2, 3, 4};
  cfg.variant = unet::DnVariant::kDn4;
  cfg.seed = seed;
  unet::UNetModel model = unet::build_model(cfg);
  for (auto& v : model.params.views()) {
    switch (v.kind) {
      case unet::ParamKind::kConvBias: randomize(v.values, rng, -0.1, 0.2); break;
      case unet::ParamKind::kDnBeta: randomize(v.values, rng, 0.5, 1.5); break;
      case unet::ParamKind::kDnGamma: randomize(v.values, rng, 0.0, 0.1); break;
      default: break;
    }
  }
  const Tensor x = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
  const Tensor r = random_tensor({1, cfg.num_classes, 8, 8}, rng);
  auto f = [&] { return dot(r, unet::model_forward(model, x).logits); };
  const auto fwd = unet::model_forward(model, x);
  unet::Parameters g = unet::model_backward(model, fwd.cache, r);
  auto pv = model.params.views();
  auto gv = g.views();
  for (std::size_t k = 0; k < pv.size(); ++k) {
    ck.add("unet_dn4", to_vec(gv[k].values), numeric_gradient(pv[k].values, f, ck.step()));
  }
}

}  // namespace

std::vector<std::string> op_names() {
  return {"conv2d_zero",  "conv2d_reflect", "conv2d_stride2",   "maxpool2",
          "upsample2",    "concat",         "relu",             "mae_loss",
          "dn.z",         "dn.beta",        "dn.gamma",         "dn_naive.z",
          "dn_naive.beta", "dn_naive.gamma", "unet_dn4"};
}

std::vector<OpResult> run_all(const Options& options) {
  Checker ck(options);
  Rng rng = Rng::substream(options.seed, "gradcheck");
  check_conv(ck, rng, "conv2d_zero", Padding::kZero, 1);
  check_conv(ck, rng, "conv2d_reflect", Padding::kReflect, 1);
  check_conv(ck, rng, "conv2d_stride2", Padding::kZero, 2);
  check_maxpool(ck, rng);
  check_upsample(ck, rng);
  check_concat(ck, rng);
  check_relu(ck, rng);
  check_mae(ck, rng);
  check_dn(ck, rng, "dn", divnorm::PoolStrategy::kChannelBlocked);
  check_dn(ck, rng, "dn_naive", divnorm::PoolStrategy::kNaive);
  check_unet(ck, rng, options.seed);
  return ck.finish();
}

}  // namespace dnseg::gradcheck
