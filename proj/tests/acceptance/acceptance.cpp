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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "dnseg/binary_io.hpp"
#include "dnseg/bio.hpp"
#include "dnseg/data.hpp"
#include "dnseg/divnorm.hpp"
#include "dnseg/gradcheck.hpp"
#include "dnseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dnseg;

namespace {

struct Settings {
  fs::path work = "acceptance_work";
  std::size_t train_scenes = 320;  // 256 train + 64 validation
  std::size_t test_scenes = 128;
  std::size_t epochs = 30;
  std::string lr = "1e-3";
  std::size_t batch = 8;
  std::string channels = "16,32,64";
  std::vector<std::uint64_t> seeds = {0, 1, 2};
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cli(std::vector<std::string> args) { return cli::run(args); }

json read_json(const fs::path& p) { return json::parse(std::ifstream(p)); }

// ---------------------------------------------------------------------------

Outcome gradients() {
  gradcheck::Options opt;
  opt.tolerance = 1e-4;
  const auto results = gradcheck::run_all(opt);
  double worst = 0.0;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed += " " + r.op;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu ops, worst rel err %.2e", results.size(), worst);
  return {failed.empty(), buf + (failed.empty() ? std::string() : ", failed:" + failed)};
}

Outcome dn_invariants() {
  Rng rng(2024);
  std::size_t failures = 0;
  std::string first;
  auto fail = [&](std::size_t trial, const std::string& what) {
    if (failures++ == 0) first = "case " + std::to_string(trial) + ": " + what;
  };
  for (std::size_t trial = 0; trial < 1000; ++trial) {
    const std::size_t c = 1 + rng.index(5);
    const std::size_t k = 1 + 2 * rng.index(3);
    const Shape s{1 + rng.index(2), c, 1 + rng.index(9), 1 + rng.index(9)};
    divnorm::DnParams p = divnorm::DnParams::initialize(c, k);
    for (double& b : p.beta) b = rng.uniform(divnorm::kBetaMin, 2.0);
    for (double& g : p.gamma.data()) g = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.0, 0.5);
    Tensor z(s);
    for (double& v : z.data()) v = rng.normal() * std::pow(10.0, rng.uniform(-3.0, 1.0));
    const double beta_min = *std::min_element(p.beta.begin(), p.beta.end());

    const Tensor y = divnorm::dn_forward(z, p).y;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (z[i] != 0.0 && std::signbit(y[i]) != std::signbit(z[i])) {
        fail(trial, "sign");
        break;
      }
      if (std::fabs(y[i]) > std::fabs(z[i]) / beta_min) {
        fail(trial, "bound");
        break;
      }
    }
    for (double kk : {1.0, 2.0, 10.0}) {
      const Tensor yk = divnorm::dn_forward(scaled(z, kk), p).y;
      for (std::size_t i = 0; i < z.size(); ++i) {
        if (std::fabs(yk[i]) > kk * std::fabs(y[i]) * (1.0 + 1e-12)) {
          fail(trial, "sublinearity k=" + std::to_string(kk));
          break;
        }
      }
    }
    const Tensor yi = divnorm::dn_forward(z, divnorm::DnParams::identity(c, k)).y;
    if (!(yi == z)) fail(trial, "identity");
  }
  return {failures == 0, failures == 0 ? "1000 cases" : std::to_string(failures) + " failing, " + first};
}

// ---------------------------------------------------------------------------

struct TrendRun {
  std::map<std::string, std::vector<std::vector<double>>> iou;  // variant -> seed -> severity
  fs::path dn4_seed0;
  fs::path test_data;
  double seconds = 0.0;
  bool ok = true;
  std::string error;
};

std::vector<double> read_ious(const fs::path& report) {
  const json j = read_json(report);
  std::vector<double> v;
  for (const auto& s : j["severities"]) v.push_back(s["mean_iou"].get<double>());
  return v;
}

bool train_and_eval(const Settings& st, const fs::path& data, const fs::path& test,
                    const std::string& variant, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  const std::string model = (dir / (variant + ".dnw")).string();
  if (cli({"train", "--data", data.string(), "--variant", variant, "--epochs",
           std::to_string(st.epochs), "--lr", st.lr, "--batch", std::to_string(st.batch),
           "--seed", std::to_string(seed), "--channels", st.channels, "--val-every", "5",
           "--out", model, "--force"}) != cli::kExitOk) {
    return false;
  }
  return cli({"eval", "--model", model, "--data", test.string(), "--report",
              (dir / (variant + ".eval.json")).string()}) == cli::kExitOk;
}

TrendRun run_trend(const Settings& st) {
  TrendRun r;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path data = st.work / "train_data";
  r.test_data = st.work / "test_data";
  if (cli({"gen", "--out", data.string(), "--n", std::to_string(st.train_scenes), "--seed", "0"}) ||
      cli({"gen", "--out", r.test_data.string(), "--n", std::to_string(st.test_scenes), "--seed",
           "1000000"})) {
    r.ok = false;
    r.error = "dataset generation failed";
    return r;
  }
  for (std::uint64_t seed : st.seeds) {
    for (const char* v : {"none", "dn1", "dn4"}) {
      const fs::path dir = st.work / ("seed" + std::to_string(seed));
      if (!train_and_eval(st, data, r.test_data, v, seed, dir)) {
        r.ok = false;
        r.error = std::string("run ") + v + " seed " + std::to_string(seed) + " failed";
        return r;
      }
      r.iou[v].push_back(read_ious(dir / (std::string(v) + ".eval.json")));
      std::printf("  seed %llu %-4s", static_cast<unsigned long long>(seed), v);
      for (double x : r.iou[v].back()) std::printf(" %.4f", x);
      std::printf("\n");
      std::fflush(stdout);
    }
  }
  r.dn4_seed0 = st.work / ("seed" + std::to_string(st.seeds.front())) / "dn4.dnw";
  r.seconds = seconds_since(t0);
  return r;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome trend(const TrendRun& r) {
  if (!r.ok) return {false, r.error};
  std::vector<double> none_med, dn4_med;
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<double> a, b;
    for (const auto& seed : r.iou.at("none")) a.push_back(seed[s]);
    for (const auto& seed : r.iou.at("dn4")) b.push_back(seed[s]);
    none_med.push_back(median(a));
    dn4_med.push_back(median(b));
  }
  bool a_ok = true;
  for (std::size_t s = 0; s < 4; ++s) a_ok = a_ok && dn4_med[s] > none_med[s];
  const double gain_none = (dn4_med[0] - none_med[0]) / none_med[0];
  const double gain_high = (dn4_med[3] - none_med[3]) / none_med[3];
  const bool b_ok = gain_high > gain_none;
  bool c_ok = true;
  for (const auto& [variant, seeds] : r.iou) {
    for (const auto& v : seeds) {
      for (std::size_t s = 1; s < v.size(); ++s) c_ok = c_ok && v[s] < v[s - 1];
    }
  }
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "median none %.4f/%.4f/%.4f/%.4f dn4 %.4f/%.4f/%.4f/%.4f; "
                "(a) %s (b) gain none %+.1f%% high %+.1f%% %s (c) %s; %.0f s",
                none_med[0], none_med[1], none_med[2], none_med[3], dn4_med[0], dn4_med[1],
                dn4_med[2], dn4_med[3], a_ok ? "ok" : "no", 100 * gain_none, 100 * gain_high,
                b_ok ? "ok" : "no", c_ok ? "ok" : "no", r.seconds);
  return {a_ok && b_ok && c_ok, buf};
}

// ---------------------------------------------------------------------------

Outcome equalization(const Settings& st, const TrendRun& r) {
  const fs::path dir = st.work / "equalize";
  fs::create_directories(dir);
  const bio::FilterBank bank = bio::FilterBank::make();
  const bio::DemoReport rep =
      bio::equalize_image(bio::contrast_ramp_grating(64, 64, 8.0, 0.04, 0.45), bank, {}, 8);
  if (!rep.dominant_band) return {false, "grating has no dominant band"};
  const auto& band = rep.bands[*rep.dominant_band];
  const bool grating_ok = band.cv_after && band.cv_before && *band.cv_after < *band.cv_before;

  if (!r.ok) return {false, "no trained dn4 model"};
  const fs::path clean = r.test_data / "img_000000_none.f64";
  const fs::path fogged = r.test_data / "img_000000_high.f64";
  if (cli({"dump-features", "--model", r.dn4_seed0.string(), "--image", clean.string(),
           "--fogged", fogged.string(), "--site", "2", "--out", (dir / "site2").string()})) {
    return {false, "dump-features failed"};
  }
  const json cmp = read_json(dir / "site2" / "summary.json")["comparison"];
  const double rb = cmp["relative_mad_before"].get<double>();
  const double ra = cmp["relative_mad_after"].get<double>();
  const bool maps_ok = ra < rb;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "grating %s cv %.4f -> %.4f; site 2 relative MAD %.4f -> %.4f (raw %.4f -> %.4f)",
                band.name.c_str(), band.cv_before.value_or(0.0), band.cv_after.value_or(0.0), rb,
                ra, cmp["mad_before"].get<double>(), cmp["mad_after"].get<double>());
  return {grating_ok && maps_ok, buf};
}

Outcome fog_exactness() {
  double worst = 0.0;
  auto check = [&](double got, double want) { worst = std::max(worst, std::fabs(got - want)); };

  const Tensor j({1, 3, 2, 2}, 0.8);
  const Tensor d({1, 1, 2, 2}, 1.0);
  data::FogParams none;
  none.attenuation = 0.0;
  const Tensor id = data::apply_fog(j, d, none);
  for (std::size_t i = 0; i < j.size(); ++i) check(id[i], j[i]);
  data::FogParams half;
  half.attenuation = std::log(2.0);
  half.airlight = {1.0, 1.0, 1.0};
  const Tensor blend = data::apply_fog(j, d, half);
  for (double v : blend.data()) check(v, 0.9);
  const data::FogParams high = data::FogParams::preset(data::Severity::kHigh);
  const Tensor far = data::apply_fog(j, Tensor({1, 1, 2, 2}, 1e4), high);
  for (std::size_t c = 0; c < 3; ++c) {
    for (double v : far.plane(0, c)) check(v, high.airlight[c]);
  }
  const bool exact = worst <= 1e-12;

  std::size_t violations = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = data::generate_scene(seed, 32, 32, 4);
    const Tensor tl = data::transmittance(s.depth, 0.5);
    const Tensor tm = data::transmittance(s.depth, 1.0);
    const Tensor th = data::transmittance(s.depth, 2.0);
    for (std::size_t i = 0; i < tl.size(); ++i) {
      violations += !(th[i] < tm[i] && tm[i] < tl[i] && tl[i] <= 1.0);
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "max analytic error %.1e; %zu ordering violations on 100 scenes",
                worst, violations);
  return {exact && violations == 0, buf};
}

Outcome determinism(const Settings& st) {
  const fs::path data = st.work / "train_data";
  const fs::path test = st.work / "test_data";
  const std::uint64_t seed = st.seeds.front();
  const fs::path a = st.work / ("seed" + std::to_string(seed));
  const fs::path b = st.work / "repeat";
  if (!train_and_eval(st, data, test, "none", seed, b)) return {false, "repeat run failed"};
  const bool hist =
      io::read_file(a / "none.dnw.history.jsonl") == io::read_file(b / "none.dnw.history.jsonl");
  const bool weights = io::read_file(a / "none.dnw") == io::read_file(b / "none.dnw");
  json ra = read_json(a / "none.eval.json");
  json rb = read_json(b / "none.eval.json");
  ra.erase("model");
  rb.erase("model");
  const bool report = ra == rb;
  std::string detail = std::string("history ") + (hist ? "identical" : "differs") + ", weights " +
                       (weights ? "identical" : "differ") + ", report " +
                       (report ? "identical" : "differs");
  return {hist && weights && report, detail};
}

}  // namespace

int main(int argc, char** argv) {
  Settings st;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string k = argv[i];
    const std::string v = argv[i + 1];
    if (k == "--work") st.work = v;
    else if (k == "--epochs") st.epochs = std::stoul(v);
    else if (k == "--lr") st.lr = v;
    else if (k == "--channels") st.channels = v;
    else {
      std::fprintf(stderr, "unknown option %s\n", k.c_str());
      return 2;
    }
  }
  fs::remove_all(st.work);
  fs::create_directories(st.work);

  std::vector<std::pair<std::string, Outcome>> results;
  auto record = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    char t[32];
    std::snprintf(t, sizeof t, " [%.1f s]", seconds_since(t0));
    o.detail += t;
    results.emplace_back(std::to_string(id) + " " + name, o);
    std::printf("criterion %s: %s (%s)\n", results.back().first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  };

  record(1, "gradient check", gradients);
  record(2, "DN invariants", dn_invariants);
  TrendRun trend_run;
  record(3, "fog trend", [&] {
    trend_run = run_trend(st);
    return trend(trend_run);
  });
  record(4, "equalization", [&] { return equalization(st, trend_run); });
  record(5, "fog renderer", fog_exactness);
  record(6, "determinism", [&] { return determinism(st); });

  std::printf("\n");
  bool all = true;
  for (const auto& [name, o] : results) {
    std::printf("%s criterion %s\n", o.pass ? "PASS" : "FAIL", name.c_str());
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
