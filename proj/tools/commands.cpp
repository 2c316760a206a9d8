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

#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dnseg/binary_io.hpp"
#include "dnseg/bio.hpp"
#include "dnseg/data.hpp"
#include "dnseg/divnorm.hpp"
#include "dnseg/error.hpp"
#include "dnseg/gradcheck.hpp"
#include "dnseg/image_io.hpp"
#include "dnseg/metrics.hpp"
#include "dnseg/rng.hpp"
#include "dnseg/train.hpp"
#include "dnseg/unet.hpp"

#ifndef DNSEG_VERSION
#define DNSEG_VERSION "unknown"
#endif

namespace dnseg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::time(nullptr)));
}

void setup_logging() {
  auto logger = spdlog::get("dnseg");
  if (!logger) {
    logger = spdlog::stderr_color_st("dnseg");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
  }
  const char* env = std::getenv("DNSEG_LOG");
  const std::string level = env ? env : "info";
  if (level == "quiet") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

// Written next to the outputs of every subcommand.
struct RunManifest {
  explicit RunManifest(std::string sub) : subcommand(std::move(sub)) {}

  std::string subcommand;
  json config = json::object();
  std::uint64_t seed = 0;
  std::string started_at = utc_now();
  std::vector<std::string> outputs;

  void write(const fs::path& path) const {
    json j{{"subcommand", subcommand},
           {"config", config},
           {"seed", seed},
           {"version", DNSEG_VERSION},
           {"started_at", started_at},
           {"finished_at", utc_now()},
           {"outputs", outputs}};
    io::write_text(path, j.dump(2) + "\n");
  }
};

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  return fs::path(p.string() + suffix);
}

std::vector<std::size_t> parse_channels(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = std::min(s.find(',', pos), s.size());
    const std::string tok = s.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      const long v = std::stol(tok, &used);
      if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError("--channels: expected three positive integers like 16,32,64, got '" + s +
                        "'");
    }
    pos = comma + 1;
  }
  if (out.size() != unet::kDepth) {
    throw ConfigError("--channels: expected exactly three values, got '" + s + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// gen

struct GenOptions {
  fs::path out;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::size_t classes = 4;
  std::size_t height = 32;
  std::size_t width = 32;
  double fog_low = 0.5, fog_mid = 1.0, fog_high = 2.0;
  std::size_t threads = 1;
};

int cmd_gen(const GenOptions& o) {
  if (o.n == 0) throw ConfigError("gen: --n must be at least 1");
  if (o.threads == 0) throw ConfigError("gen: --threads must be at least 1");
  std::vector<data::FogParams> fog;
  const double att[] = {0.0, o.fog_low, o.fog_mid, o.fog_high};
  for (std::size_t i = 0; i < data::kAllSeverities.size(); ++i) {
    data::FogParams f = data::FogParams::preset(data::kAllSeverities[i]);
    f.attenuation = att[i];
    f.validate();
    fog.push_back(f);
  }
  // Validate dimensions before touching the output directory.
  data::generate_scene(o.seed, o.height, o.width, o.classes, {});

  data::DatasetWriter writer(o.out, o.height, o.width, o.classes, fog);
  const std::size_t chunk = std::max<std::size_t>(o.threads * 4, 1);
  for (std::size_t begin = 0; begin < o.n; begin += chunk) {
    const std::size_t end = std::min(o.n, begin + chunk);
    std::vector<data::SceneSample> scenes(end - begin);
    {
      std::vector<std::jthread> workers;
      const std::size_t t = std::min(o.threads, end - begin);
      for (std::size_t w = 0; w < t; ++w) {
        workers.emplace_back([&, w] {
          for (std::size_t i = begin + w; i < end; i += t) {
            scenes[i - begin] = data::generate_scene(o.seed + i, o.height, o.width, o.classes, {});
          }
        });
      }
    }
    for (std::size_t i = begin; i < end; ++i) writer.add(i, scenes[i - begin]);
  }
  writer.finish();
  spdlog::info("gen: wrote {} scenes x {} severities to {}", o.n, fog.size(), o.out.string());

  RunManifest m{"gen"};
  m.seed = o.seed;
  m.config = {{"out", o.out.string()}, {"n", o.n},           {"seed", o.seed},
              {"classes", o.classes},  {"height", o.height}, {"width", o.width},
              {"fog", {{"low", o.fog_low}, {"mid", o.fog_mid}, {"high", o.fog_high}}},
              {"threads", o.threads}};
  m.outputs = {(o.out / "manifest.json").string()};
  m.write(o.out / "run.json");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  fs::path data;
  std::string variant = "none";
  std::size_t epochs = 150;
  double lr = 1e-3;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  fs::path out;
  bool force = false;
  double val_fraction = 0.2;
  std::size_t val_every = 1;
  std::string channels = "16,32,64";
  std::size_t window = divnorm::kDefaultWindow;
};

int cmd_train(const TrainOptions& o) {
  unet::UNetConfig cfg;
  cfg.variant = unet::parse_variant(o.variant);
  const auto ch = parse_channels(o.channels);
  std::copy(ch.begin(), ch.end(), cfg.encoder_channels.begin());
  cfg.dn_window = o.window;
  cfg.seed = o.seed;

  train::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.learning_rate = o.lr;
  tc.batch_size = o.batch;
  tc.seed = o.seed;
  tc.val_every = o.val_every;
  tc.out_path = o.out.string();
  tc.validate();
  if (!(o.val_fraction > 0.0 && o.val_fraction < 1.0)) {
    throw ConfigError("train: --val-fraction must be in (0, 1)");
  }

  const fs::path meta_path = with_suffix(o.out, ".json");
  const fs::path hist_path = with_suffix(o.out, ".history.jsonl");
  if (!o.force && fs::exists(o.out)) {
    throw ConfigError("train: " + o.out.string() + " exists; pass --force to overwrite");
  }

  data::DatasetReader reader(o.data);
  const auto& man = reader.manifest();
  cfg.in_channels = 3;
  cfg.num_classes = man.num_classes;
  cfg.validate();
  const std::size_t n = reader.size();
  const auto n_val = static_cast<std::size_t>(std::llround(o.val_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) {
    throw ConfigError("train: dataset of " + std::to_string(n) +
                      " samples is too small for --val-fraction " + std::to_string(o.val_fraction));
  }
  const std::size_t n_train = n - n_val;
  const auto train_set = train::load_examples(reader, data::Severity::kNone, 0, n_train);
  const auto val_set = train::load_examples(reader, data::Severity::kNone, n_train, n);
  spdlog::info("train: variant {} on {} clean scenes, validating on {}", o.variant, n_train, n_val);

  const unet::UNetModel init = unet::build_model(cfg);
  spdlog::info("train: {} parameters", init.parameter_count());
  auto on_epoch = [](const train::EpochRecord& r) {
    if (r.val_miou) {
      spdlog::info("epoch {:4d}  loss {:.6f}  val mIoU {:.4f}", r.epoch, r.loss, *r.val_miou);
    } else {
      spdlog::debug("epoch {:4d}  loss {:.6f}", r.epoch, r.loss);
    }
  };
  const train::TrainResult res = train::train(init, train_set, val_set, tc, on_epoch);

  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  unet::save_model(res.best, o.out);
  std::string hist;
  for (const auto& r : res.history) hist += r.to_json().dump() + "\n";
  io::write_text(hist_path, hist);

  json meta{{"model", to_json(cfg)},
            {"train", to_json(tc)},
            {"data", o.data.string()},
            {"train_samples", n_train},
            {"val_samples", n_val},
            {"parameter_count", init.parameter_count()},
            {"best_epoch", res.best_epoch ? json(*res.best_epoch) : json(nullptr)},
            {"best_val_miou", res.best_val_miou ? json(*res.best_val_miou) : json(nullptr)},
            {"reference_protocol", {{"batch_size", 64}, {"epochs", 500}, {"learning_rate", 1e-3}}}};
  write_json(meta_path, meta);

  RunManifest m{"train"};
  m.seed = o.seed;
  m.config = {{"data", o.data.string()}, {"variant", o.variant}, {"epochs", o.epochs},
              {"lr", o.lr},               {"batch", o.batch},     {"seed", o.seed},
              {"out", o.out.string()},    {"val_fraction", o.val_fraction},
              {"val_every", o.val_every}, {"channels", o.channels}, {"window", o.window}};
  m.outputs = {o.out.string(), meta_path.string(), hist_path.string()};
  m.write(with_suffix(o.out, ".run.json"));
  if (res.best_val_miou) {
    spdlog::info("train: best val mIoU {:.4f} at epoch {}", *res.best_val_miou, *res.best_epoch);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::vector<fs::path> models;
  fs::path data;
  fs::path report;
  std::size_t batch = 16;
  std::size_t threads = 1;
};

int cmd_eval(const EvalOptions& o) {
  if (o.threads == 0) throw ConfigError("eval: --threads must be at least 1");
  data::DatasetReader reader(o.data);
  const std::vector<data::Severity> sevs(data::kAllSeverities.begin(), data::kAllSeverities.end());
  std::vector<metrics::EvalReport> reports;
  for (const auto& path : o.models) {
    const unet::UNetModel model = unet::load_model(path);
    if (model.config.num_classes != reader.manifest().num_classes) {
      throw ConfigError("eval: model " + path.string() + " predicts " +
                        std::to_string(model.config.num_classes) + " classes, dataset has " +
                        std::to_string(reader.manifest().num_classes));
    }
    reports.push_back(metrics::evaluate(model, reader, sevs, o.batch, o.threads));
    spdlog::info("eval: {} done", path.string());
  }

  json j;
  if (reports.size() == 1) {
    j = reports.front().to_json();
    j["model"] = o.models.front().string();
  } else {
    json arr = json::array();
    for (std::size_t i = 0; i < reports.size(); ++i) {
      json r = reports[i].to_json();
      r["model"] = o.models[i].string();
      arr.push_back(r);
    }
    j = {{"reports", arr}};
  }
  const auto table = metrics::ComparisonTable::from_reports(reports);
  j["comparison"] = table.to_json();
  if (o.report.has_parent_path()) fs::create_directories(o.report.parent_path());
  write_json(o.report, j);
  const fs::path text_path = with_suffix(o.report, ".txt");
  io::write_text(text_path, table.to_text());
  std::cout << table.to_text();

  RunManifest m{"eval"};
  json models = json::array();
  for (const auto& p : o.models) models.push_back(p.string());
  m.config = {{"models", models}, {"data", o.data.string()}, {"report", o.report.string()},
              {"batch", o.batch}, {"threads", o.threads}};
  m.outputs = {o.report.string(), text_path.string()};
  m.write(with_suffix(o.report, ".run.json"));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::string inject_fault;
  fs::path report;
};

int cmd_gradcheck(const GradcheckOptions& o) {
  gradcheck::Options opt;
  opt.seed = o.seed;
  opt.step = o.step;
  opt.tolerance = o.tolerance;
  if (!o.inject_fault.empty()) {
    const auto names = gradcheck::op_names();
    if (std::find(names.begin(), names.end(), o.inject_fault) == names.end()) {
      throw ConfigError("gradcheck: unknown op '" + o.inject_fault + "' for --inject-fault");
    }
    opt.inject_fault = o.inject_fault;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = gradcheck::run_all(opt);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::vector<std::string> failed;
  json ops = json::array();
  std::cout << fmt::format("{:<16} {:>12} {:>8}  {}\n", "op", "max_rel_err", "checked", "status");
  for (const auto& r : results) {
    std::cout << fmt::format("{:<16} {:>12.3e} {:>8}  {}\n", r.op, r.max_rel_error, r.checked,
                             r.passed ? "PASS" : "FAIL");
    ops.push_back({{"op", r.op},
                   {"max_rel_error", r.max_rel_error},
                   {"checked", r.checked},
                   {"passed", r.passed}});
    if (!r.passed) failed.push_back(r.op);
  }
  std::cout << fmt::format("{} ops, {} failed, tolerance {:.0e}, {:.2f} s\n", results.size(),
                           failed.size(), o.tolerance, secs);
  if (!o.report.empty()) {
    write_json(o.report, {{"seed", o.seed},
                          {"step", o.step},
                          {"tolerance", o.tolerance},
                          {"ops", ops},
                          {"passed", failed.empty()}});
  }
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    spdlog::error("gradcheck failed: {}", names);
    return kExitNumerical;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// equalize

struct EqualizeOptions {
  fs::path image;
  fs::path out;
  bio::FixedDnConfig config;
  std::size_t tile = 8;
};

int cmd_equalize(const EqualizeOptions& o) {
  o.config.validate();
  const bio::DemoReport rep = bio::demo_equalize(o.image, o.out, o.config, o.tile);
  if (rep.degenerate) spdlog::warn("equalize: input has no band-pass energy");
  if (rep.dominant_band) {
    const auto& b = rep.bands[*rep.dominant_band];
    spdlog::info("equalize: dominant band {} cv {:.4f} -> {:.4f}", b.name, b.cv_before.value_or(0.0),
                 b.cv_after.value_or(0.0));
  }
  RunManifest m{"equalize"};
  m.config = {{"image", o.image.string()}, {"out", o.out.string()},
              {"beta", o.config.beta},     {"sigma", o.config.sigma},
              {"coupling", o.config.coupling}, {"tile", o.tile}};
  m.outputs = {(o.out / "report.json").string(), (o.out / "scatter.json").string()};
  m.write(o.out / "run.json");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// dump-features

struct DumpOptions {
  fs::path model;
  fs::path image;
  fs::path fogged;
  int site = 2;
  fs::path out;
  std::size_t tile = 8;
};

struct SiteMaps {
  Tensor before;
  Tensor after;
};

SiteMaps site_maps(const unet::UNetModel& model, const Tensor& image, int site) {
  const auto fwd = unet::model_forward(model, image);
  const auto& c = fwd.cache.dn[static_cast<std::size_t>(site - 1)];
  DNSEG_INVARIANT(c.has_value());
  return {c->z, c->y};
}

Tensor load_rgb(const fs::path& path, std::size_t channels) {
  Tensor t = image_io::read_image(path);
  if (t.shape().n != 1 || t.shape().c != channels) {
    throw ShapeError("dump-features: " + path.string() + " has shape " + t.shape().str() +
                     ", expected (1," + std::to_string(channels) + ",H,W)");
  }
  return t;
}

double mean_abs(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += std::fabs(v);
  return s / static_cast<double>(a.size());
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

json write_maps(const fs::path& dir, const std::string& prefix, const SiteMaps& m,
                std::vector<std::string>& outputs) {
  json ranges = json::array();
  for (std::size_t c = 0; c < m.before.shape().c; ++c) {
    const fs::path b = dir / fmt::format("{}_before_c{:02d}.pgm", prefix, c);
    const fs::path a = dir / fmt::format("{}_after_c{:02d}.pgm", prefix, c);
    const auto rb = image_io::write_pgm(b, m.before, 0, c);
    const auto ra = image_io::write_pgm(a, m.after, 0, c);
    outputs.push_back(b.string());
    outputs.push_back(a.string());
    ranges.push_back({{"channel", c},
                      {"before_range", {rb.min, rb.max}},
                      {"after_range", {ra.min, ra.max}}});
  }
  return ranges;
}

int cmd_dump_features(const DumpOptions& o) {
  if (o.site < 1 || o.site > static_cast<int>(unet::kMaxDnSites)) {
    throw ConfigError("dump-features: --site must be in 1..4");
  }
  const unet::UNetModel model = unet::load_model(o.model);
  if (model.params.dn_site_count() == 0) {
    throw ConfigError("dump-features: model " + o.model.string() +
                      " has no DN sites (variant none)");
  }
  if (!unet::has_site(model.config.variant, o.site)) {
    throw ConfigError("dump-features: variant " + std::string(unet::to_string(model.config.variant)) +
                      " has no DN layer at site " + std::to_string(o.site));
  }
  fs::create_directories(o.out);
  std::vector<std::string> outputs;
  const Tensor clean = load_rgb(o.image, model.config.in_channels);
  const SiteMaps cm = site_maps(model, clean, o.site);
  json summary{{"model", o.model.string()},
               {"site", o.site},
               {"channels", cm.before.shape().c},
               {"height", cm.before.shape().h},
               {"width", cm.before.shape().w}};
  const std::string clean_prefix = o.fogged.empty() ? "site" : "clean";
  summary["maps"] = {{clean_prefix, write_maps(o.out, clean_prefix, cm, outputs)}};

  const auto eq = metrics::equalization_stats(cm.before, cm.after, o.tile);
  json cv = json::array();
  for (std::size_t c = 0; c < eq.cv_before.size(); ++c) {
    cv.push_back({{"channel", c},
                  {"cv_before", eq.cv_before[c] ? json(*eq.cv_before[c]) : json(nullptr)},
                  {"cv_after", eq.cv_after[c] ? json(*eq.cv_after[c]) : json(nullptr)}});
  }
  summary["equalization"] = cv;

  if (!o.fogged.empty()) {
    const Tensor fog = load_rgb(o.fogged, model.config.in_channels);
    if (!(fog.shape() == clean.shape())) {
      throw ShapeError("dump-features: clean " + clean.shape().str() + " and fogged " +
                       fog.shape().str() + " images differ in shape");
    }
    const SiteMaps fm = site_maps(model, fog, o.site);
    summary["maps"]["fogged"] = write_maps(o.out, "fogged", fm, outputs);
    const double mad_before = mean_abs_diff(cm.before, fm.before);
    const double mad_after = mean_abs_diff(cm.after, fm.after);
    const double scale_before = mean_abs(cm.before);
    const double scale_after = mean_abs(cm.after);
    summary["comparison"] = {
        {"mad_before", mad_before},
        {"mad_after", mad_after},
        {"relative_mad_before", scale_before > 0 ? json(mad_before / scale_before) : json(nullptr)},
        {"relative_mad_after", scale_after > 0 ? json(mad_after / scale_after) : json(nullptr)},
    };
    spdlog::info("dump-features: clean/fogged MAD before {:.5f} after {:.5f}", mad_before,
                 mad_after);
  }
  const fs::path summary_path = o.out / "summary.json";
  write_json(summary_path, summary);
  outputs.push_back(summary_path.string());

  RunManifest m{"dump-features"};
  m.config = {{"model", o.model.string()}, {"image", o.image.string()},
              {"fogged", o.fogged.string()}, {"site", o.site},
              {"out", o.out.string()},     {"tile", o.tile}};
  m.outputs = outputs;
  m.write(o.out / "run.json");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  std::string op = "dn-forward";
  std::size_t channels = 16;
  std::size_t size = 64;
  std::size_t window = divnorm::kDefaultWindow;
  std::size_t iters = 20;
  std::size_t warmup = 2;
  std::uint64_t seed = 0;
  fs::path report;
};

json timing_stats(std::vector<double> ms, double elements) {
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  const double median = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  const std::size_t p95_idx =
      std::min(n - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1);
  double mean = 0.0;
  for (double v : ms) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : ms) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  return {{"iters", n},
          {"median_ms", median},
          {"p95_ms", ms[p95_idx]},
          {"mean_ms", mean},
          {"variance_ms2", var},
          {"min_ms", ms.front()},
          {"max_ms", ms.back()},
          {"elements_per_second", median > 0 ? elements / (median * 1e-3) : 0.0}};
}

template <typename F>
std::vector<double> time_iters(std::size_t warmup, std::size_t iters, F&& f) {
  for (std::size_t i = 0; i < warmup; ++i) f();
  std::vector<double> ms;
  ms.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                     .count());
  }
  return ms;
}

int cmd_bench(const BenchOptions& o) {
  if (o.iters == 0) throw ConfigError("bench: --iters must be at least 1");
  if (o.channels == 0 || o.size == 0) throw ConfigError("bench: --channels and --size must be positive");
  if (o.window % 2 == 0) throw ConfigError("bench: --window must be odd");
  Rng rng = Rng::substream(o.seed, "bench");
  Tensor z({1, o.channels, o.size, o.size});
  for (double& v : z.data()) v = rng.uniform(-1.0, 1.0);
  const double elements = static_cast<double>(z.size());
  json rep{{"op", o.op},          {"channels", o.channels}, {"size", o.size},
           {"window", o.window},  {"warmup", o.warmup},     {"seed", o.seed}};

  if (o.op == "conv") {
    const ConvSpec spec{o.channels, o.channels, o.window, o.window, 1, Padding::kReflect};
    Tensor w(spec.weight_shape());
    for (double& v : w.data()) v = rng.uniform(-0.1, 0.1);
    std::vector<double> b(o.channels, 0.0);
    rep["strategies"]["direct"] =
        timing_stats(time_iters(o.warmup, o.iters, [&] { (void)conv2d_forward(z, w, b, spec); }),
                     elements);
  } else if (o.op == "dn-forward" || o.op == "dn-backward") {
    divnorm::DnParams p = divnorm::DnParams::initialize(o.channels, o.window);
    for (double& g : p.gamma.data()) g = rng.uniform(0.0, 0.05);
    const auto blocked = divnorm::dn_forward(z, p, divnorm::PoolStrategy::kChannelBlocked);
    const auto naive = divnorm::dn_forward(z, p, divnorm::PoolStrategy::kNaive);
    Tensor gy(z.shape());
    for (double& v : gy.data()) v = rng.uniform(-1.0, 1.0);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      max_diff = std::max(max_diff, std::fabs(blocked.y[i] - naive.y[i]));
    }
    if (o.op == "dn-backward") {
      const auto gb = divnorm::dn_backward(z, p, blocked.denom, gy,
                                           divnorm::PoolStrategy::kChannelBlocked);
      const auto gn = divnorm::dn_backward(z, p, naive.denom, gy, divnorm::PoolStrategy::kNaive);
      for (std::size_t i = 0; i < z.size(); ++i) {
        max_diff = std::max(max_diff, std::fabs(gb.z[i] - gn.z[i]));
      }
      for (std::size_t i = 0; i < gb.gamma.size(); ++i) {
        max_diff = std::max(max_diff, std::fabs(gb.gamma[i] - gn.gamma[i]));
      }
    }
    rep["max_abs_difference"] = max_diff;
    if (!(max_diff <= 1e-12)) {
      throw NumericalError(fmt::format("bench: strategies disagree by {:.3e} (> 1e-12)", max_diff));
    }
    for (auto [name, strat] : {std::pair{"channel_blocked", divnorm::PoolStrategy::kChannelBlocked},
                               std::pair{"naive", divnorm::PoolStrategy::kNaive}}) {
      std::vector<double> ms;
      if (o.op == "dn-forward") {
        ms = time_iters(o.warmup, o.iters, [&] { (void)divnorm::dn_forward(z, p, strat); });
      } else {
        const auto& denom = strat == divnorm::PoolStrategy::kNaive ? naive.denom : blocked.denom;
        ms = time_iters(o.warmup, o.iters,
                        [&] { (void)divnorm::dn_backward(z, p, denom, gy, strat); });
      }
      rep["strategies"][name] = timing_stats(std::move(ms), elements);
    }
  } else {
    throw ConfigError("bench: unknown --op '" + o.op + "' (expected dn-forward|dn-backward|conv)");
  }
  std::cout << rep.dump(2) << "\n";
  if (!o.report.empty()) {
    write_json(o.report, rep);
    RunManifest m{"bench"};
    m.seed = o.seed;
    m.config = {{"op", o.op},     {"channels", o.channels}, {"size", o.size},
                {"window", o.window}, {"iters", o.iters},   {"warmup", o.warmup}};
    m.outputs = {o.report.string()};
    m.write(with_suffix(o.report, ".run.json"));
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  setup_logging();
  CLI::App app{"dnseg: divisive normalization for fog-robust segmentation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DNSEG_VERSION);

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic scene dataset with fog variants");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--n", gen.n, "Number of scenes")->required();
  g->add_option("--seed", gen.seed, "Base seed; scene i uses seed + i");
  g->add_option("--classes", gen.classes, "Number of classes including background");
  g->add_option("--height", gen.height, "Image height (multiple of 8)");
  g->add_option("--width", gen.width, "Image width (multiple of 8)");
  g->add_option("--fog-low", gen.fog_low, "Attenuation per unit depth, severity low");
  g->add_option("--fog-mid", gen.fog_mid, "Attenuation per unit depth, severity mid");
  g->add_option("--fog-high", gen.fog_high, "Attenuation per unit depth, severity high");
  g->add_option("--threads", gen.threads, "Worker threads");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train a U-Net on the clean scenes of a dataset");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--variant", tr.variant, "none|dn1|dn4");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--lr", tr.lr, "Adam learning rate");
  t->add_option("--batch", tr.batch, "Mini-batch size");
  t->add_option("--seed", tr.seed, "Seed for initialization and shuffling");
  t->add_option("--out", tr.out, "Weight file to write")->required();
  t->add_flag("--force", tr.force, "Overwrite an existing weight file");
  t->add_option("--val-fraction", tr.val_fraction, "Fraction of scenes held out for validation");
  t->add_option("--val-every", tr.val_every, "Validate every N epochs");
  t->add_option("--channels", tr.channels, "Encoder widths, e.g. 16,32,64");
  t->add_option("--window", tr.window, "DN spatial window (odd)");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Score models on every fog severity");
  e->add_option("--model", ev.models, "Weight file (repeatable)")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--report", ev.report, "Report JSON path")->required();
  e->add_option("--batch", ev.batch);
  e->add_option("--threads", ev.threads, "Worker threads");

  GradcheckOptions gc;
  auto* c = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  c->add_option("--seed", gc.seed);
  c->add_option("--step", gc.step, "Central difference step");
  c->add_option("--tolerance", gc.tolerance, "Maximum relative error");
  c->add_option("--inject-fault", gc.inject_fault, "Corrupt the analytic gradient of an op (test hook)");
  c->add_option("--report", gc.report, "Optional JSON summary");

  EqualizeOptions eq;
  auto* q = app.add_subcommand("equalize", "Fixed filter bank + divisive normalization demo");
  q->add_option("--image", eq.image, "PGM/PPM image or .f64 blob")->required();
  q->add_option("--out", eq.out, "Output directory")->required();
  q->add_option("--beta", eq.config.beta);
  q->add_option("--sigma", eq.config.sigma, "Spatial width of the normalization pool");
  q->add_option("--coupling", eq.config.coupling, "Weight of other orientations in the pool");
  q->add_option("--tile", eq.tile, "Tile size for equalization statistics");

  DumpOptions dp;
  auto* d = app.add_subcommand("dump-features", "Write feature maps before and after a DN layer");
  d->add_option("--model", dp.model)->required();
  d->add_option("--image", dp.image, "Clean input image")->required();
  d->add_option("--fogged", dp.fogged, "Optional fogged version of the same scene");
  d->add_option("--site", dp.site, "DN site 1..4");
  d->add_option("--out", dp.out, "Output directory")->required();
  d->add_option("--tile", dp.tile);

  BenchOptions bn;
  auto* b = app.add_subcommand("bench", "Time conv and DN kernels");
  b->add_option("--op", bn.op, "dn-forward|dn-backward|conv");
  b->add_option("--channels", bn.channels);
  b->add_option("--size", bn.size, "Spatial size (square)");
  b->add_option("--window", bn.window);
  b->add_option("--iters", bn.iters);
  b->add_option("--warmup", bn.warmup);
  b->add_option("--seed", bn.seed);
  b->add_option("--report", bn.report, "Optional JSON report path");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*c) return cmd_gradcheck(gc);
    if (*q) return cmd_equalize(eq);
    if (*d) return cmd_dump_features(dp);
    if (*b) return cmd_bench(bn);
  } catch (const FormatError& err) {
    spdlog::error("{}", err.what());
    return kExitFormat;
  } catch (const NumericalError& err) {
    spdlog::error("{}", err.what());
    return kExitNumerical;
  } catch (const Error& err) {
    spdlog::error("{}", err.what());
    return kExitUsage;
  } catch (const fs::filesystem_error& err) {
    spdlog::error("{}", err.what());
    return kExitFormat;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace dnseg::cli
