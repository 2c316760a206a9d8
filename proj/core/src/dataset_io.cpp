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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dnseg/binary_io.hpp"
#include "dnseg/data.hpp"
#include "dnseg/error.hpp"

namespace dnseg::data {

namespace fs = std::filesystem;
using Kind = FormatError::Kind;

namespace {

constexpr std::string_view kF64Magic = "DNSBLF64";
constexpr std::string_view kU16Magic = "DNSBLU16";
constexpr std::string_view kSevToken = "<sev>";
constexpr int kManifestVersion = 1;

io::Bytes encode_header(std::string_view magic, const Shape& s) {
  io::Bytes b;
  io::put_bytes(b, magic);
  io::put_u32(b, 4);
  io::put_u64(b, s.n);
  io::put_u64(b, s.c);
  io::put_u64(b, s.h);
  io::put_u64(b, s.w);
  return b;
}

Shape decode_header(io::Reader& rd, std::string_view magic, const std::string& name) {
  if (rd.chars(magic.size()) != magic) {
    throw FormatError(Kind::kBadMagic, name + ": bad blob magic, expected " + std::string(magic));
  }
  const std::uint32_t rank = rd.u32();
  if (rank != 4) throw FormatError(Kind::kMalformed, name + ": blob rank must be 4");
  Shape s;
  s.n = rd.u64();
  s.c = rd.u64();
  s.h = rd.u64();
  s.w = rd.u64();
  return s;
}

io::Bytes encode_f64(const Tensor& t) {
  io::Bytes b = encode_header(kF64Magic, t.shape());
  b.reserve(b.size() + t.size() * 8);
  for (double v : t.data()) io::put_f64(b, v);
  return b;
}

io::Bytes encode_u16(const LabelMap& m) {
  io::Bytes b = encode_header(kU16Magic, {m.n, 1, m.h, m.w});
  b.reserve(b.size() + m.values.size() * 2);
  for (std::uint16_t v : m.values) io::put_u16(b, v);
  return b;
}

Tensor decode_f64(std::span<const std::uint8_t> bytes, const std::string& name) {
  io::Reader rd(bytes, name);
  const Shape s = decode_header(rd, kF64Magic, name);
  std::vector<double> v(s.numel());
  for (double& x : v) x = rd.f64();
  if (rd.remaining() != 0) throw FormatError(Kind::kMalformed, name + ": trailing bytes");
  return Tensor(s, std::move(v));
}

LabelMap decode_u16(std::span<const std::uint8_t> bytes, const std::string& name) {
  io::Reader rd(bytes, name);
  const Shape s = decode_header(rd, kU16Magic, name);
  if (s.c != 1) throw FormatError(Kind::kMalformed, name + ": label blob must have 1 channel");
  LabelMap m(s.n, s.h, s.w);
  for (std::uint16_t& x : m.values) x = rd.u16();
  if (rd.remaining() != 0) throw FormatError(Kind::kMalformed, name + ": trailing bytes");
  return m;
}

std::string id_string(std::size_t id) {
  std::ostringstream os;
  os.width(6);
  os.fill('0');
  os << id;
  return os.str();
}

}  // namespace

void write_f64_blob(const fs::path& path, const Tensor& t) { io::write_file(path, encode_f64(t)); }

Tensor read_f64_blob(const fs::path& path) {
  return decode_f64(io::read_file(path), path.filename().string());
}

// ---------------------------------------------------------------------------
// Manifest

std::string ManifestSample::image_file(Severity s) const {
  std::string f = image;
  const auto pos = f.find(kSevToken);
  if (pos != std::string::npos) f.replace(pos, kSevToken.size(), to_string(s));
  return f;
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json samples_j = nlohmann::json::array();
  for (const ManifestSample& s : samples) {
    std::vector<std::string> sev;
    for (Severity v : s.severities) sev.emplace_back(data::to_string(v));
    samples_j.push_back({{"id", s.id},
                         {"image", s.image},
                         {"labels", s.labels},
                         {"depth", s.depth},
                         {"severities", sev},
                         {"crc32", s.checksums}});
  }
  return {{"version", version},
          {"H", height},
          {"W", width},
          {"K", num_classes},
          {"classes", classes},
          {"fog_attenuation", fog_attenuation},
          {"samples", samples_j}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  try {
    Manifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion) {
      throw FormatError(Kind::kVersionMismatch,
                        "manifest version " + std::to_string(m.version) + " unsupported");
    }
    m.height = j.at("H").get<std::size_t>();
    m.width = j.at("W").get<std::size_t>();
    m.num_classes = j.at("K").get<std::size_t>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    if (j.contains("fog_attenuation")) {
      m.fog_attenuation = j.at("fog_attenuation").get<std::map<std::string, double>>();
    }
    for (const auto& sj : j.at("samples")) {
      ManifestSample s;
      s.id = sj.at("id").get<std::size_t>();
      s.image = sj.at("image").get<std::string>();
      s.labels = sj.at("labels").get<std::string>();
      s.depth = sj.at("depth").get<std::string>();
      for (const auto& v : sj.at("severities")) s.severities.push_back(parse_severity(v.get<std::string>()));
      if (sj.contains("crc32")) s.checksums = sj.at("crc32").get<std::map<std::string, std::uint32_t>>();
      m.samples.push_back(std::move(s));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Kind::kMalformed, std::string("manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(Kind::kMalformed, std::string("manifest: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Writer

DatasetWriter::DatasetWriter(fs::path dir, std::size_t height, std::size_t width,
                             std::size_t num_classes, std::vector<FogParams> fog_variants)
    : dir_(std::move(dir)), fog_(std::move(fog_variants)) {
  if (fog_.empty()) throw ConfigError("dataset: at least one fog variant is required");
  for (const FogParams& f : fog_) f.validate();
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw FormatError(Kind::kIo, "cannot create " + dir_.string() + ": " + ec.message());
  manifest_.version = kManifestVersion;
  manifest_.height = height;
  manifest_.width = width;
  manifest_.num_classes = num_classes;
  manifest_.classes = class_names(num_classes);
  for (const FogParams& f : fog_) manifest_.fog_attenuation[std::string(to_string(f.severity))] = f.attenuation;
}

void DatasetWriter::add(std::size_t id, const SceneSample& sample) {
  if (finished_) throw Error("dataset writer already finished");
  const Shape& s = sample.image.shape();
  if (s.n != 1 || s.c != 3 || s.h != manifest_.height || s.w != manifest_.width) {
    throw ShapeError("dataset: sample image " + s.str() + " does not match dataset dims");
  }
  ManifestSample ms;
  ms.id = id;
  const std::string ids = id_string(id);
  ms.image = "img_" + ids + "_" + std::string(kSevToken) + ".f64";
  ms.labels = "lab_" + ids + ".u16";
  ms.depth = "dep_" + ids + ".f64";

  auto emit = [&](const std::string& name, const io::Bytes& bytes) {
    io::write_file(dir_ / name, bytes);
    ms.checksums[name] = io::crc32(bytes);
  };
  for (const FogParams& f : fog_) {
    ms.severities.push_back(f.severity);
    emit(ms.image_file(f.severity), encode_f64(apply_fog(sample, f)));
  }
  emit(ms.labels, encode_u16(sample.labels));
  emit(ms.depth, encode_f64(sample.depth));
  manifest_.samples.push_back(std::move(ms));
}

const Manifest& DatasetWriter::finish() {
  if (!finished_) {
    io::write_text(dir_ / "manifest.json", manifest_.to_json().dump(2) + "\n");
    finished_ = true;
  }
  return manifest_;
}

Manifest write_dataset(const std::vector<SceneSample>& samples,
                       const std::vector<FogParams>& fog_variants, const fs::path& dir) {
  if (samples.empty()) throw ConfigError("dataset: no samples");
  const Shape& s = samples.front().image.shape();
  const std::size_t k = [&] {
    std::uint16_t mx = 0;
    for (const auto& smp : samples) {
      for (auto v : smp.labels.values) mx = std::max(mx, v);
    }
    return static_cast<std::size_t>(mx) + 1;
  }();
  DatasetWriter w(dir, s.h, s.w, std::max<std::size_t>(k, 3), fog_variants);
  for (std::size_t i = 0; i < samples.size(); ++i) w.add(i, samples[i]);
  return w.finish();
}

// ---------------------------------------------------------------------------
// Reader

DatasetReader::DatasetReader(fs::path dir) : dir_(std::move(dir)) {
  const io::Bytes bytes = io::read_file(dir_ / "manifest.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Kind::kMalformed, (dir_ / "manifest.json").string() + ": " + e.what());
  }
  manifest_ = Manifest::from_json(j);
}

namespace {

io::Bytes read_checked(const fs::path& dir, const ManifestSample& s, const std::string& name) {
  io::Bytes bytes;
  try {
    bytes = io::read_file(dir / name);
  } catch (const FormatError& e) {
    if (e.kind() == Kind::kMissingFile) {
      throw FormatError(Kind::kMissingFile,
                        "dataset blob '" + name + "' referenced by manifest is missing");
    }
    throw;
  }
  auto it = s.checksums.find(name);
  if (it != s.checksums.end() && io::crc32(bytes) != it->second) {
    throw FormatError(Kind::kChecksum, "dataset blob '" + name + "' fails its CRC-32 check");
  }
  return bytes;
}

}  // namespace

Record DatasetReader::read(std::size_t index, Severity severity) const {
  if (index >= manifest_.samples.size()) throw ShapeError("dataset: sample index out of range");
  const ManifestSample& s = manifest_.samples[index];
  if (std::find(s.severities.begin(), s.severities.end(), severity) == s.severities.end()) {
    throw FormatError(Kind::kMissingFile, "dataset sample " + std::to_string(s.id) +
                                              " has no '" + std::string(to_string(severity)) +
                                              "' variant");
  }
  Record r;
  r.id = s.id;
  r.severity = severity;
  const std::string img = s.image_file(severity);
  r.image = decode_f64(read_checked(dir_, s, img), img);
  r.labels = decode_u16(read_checked(dir_, s, s.labels), s.labels);
  const Shape expect{1, 3, manifest_.height, manifest_.width};
  if (!(r.image.shape() == expect)) {
    throw FormatError(Kind::kShapeMismatch, "dataset blob '" + img + "' has shape " +
                                                r.image.shape().str() + ", manifest says " +
                                                expect.str());
  }
  if (r.labels.n != 1 || r.labels.h != manifest_.height || r.labels.w != manifest_.width) {
    throw FormatError(Kind::kShapeMismatch,
                      "dataset blob '" + s.labels + "' does not match manifest dims");
  }
  for (std::uint16_t v : r.labels.values) {
    if (v >= manifest_.num_classes) {
      throw FormatError(Kind::kMalformed, "dataset blob '" + s.labels + "' has label >= K");
    }
  }
  return r;
}

Tensor DatasetReader::read_depth(std::size_t index) const {
  if (index >= manifest_.samples.size()) throw ShapeError("dataset: sample index out of range");
  const ManifestSample& s = manifest_.samples[index];
  return decode_f64(read_checked(dir_, s, s.depth), s.depth);
}

std::optional<Record> DatasetReader::next() {
  std::size_t k = cursor_;
  for (std::size_t i = 0; i < manifest_.samples.size(); ++i) {
    const auto& sev = manifest_.samples[i].severities;
    if (k < sev.size()) {
      ++cursor_;
      return read(i, sev[k]);
    }
    k -= sev.size();
  }
  return std::nullopt;
}

}  // namespace dnseg::data
