// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "nbsep/wav.hpp"
#include "format.hpp"

namespace nbsep {

namespace fs = std::filesystem;

namespace {

std::string num(double v) { return detail::format_double(v); }

constexpr std::size_t kManifestColumns = 12;

}  // namespace

std::string manifest_header() {
  return "id\tmixture\ttarget0\ttarget1\tway\tratio\tsnr_db\tazimuth0\tazimuth1\t"
         "seed\toverlap_begin\toverlap_end";
}

std::string manifest_line(const ManifestEntry& e) {
  std::ostringstream os;
  os << e.id << '\t' << e.mixture << '\t' << e.targets[0] << '\t' << e.targets[1] << '\t'
     << to_string(e.way) << '\t' << num(e.overlap_ratio) << '\t' << num(e.snr_db) << '\t'
     << num(e.azimuth_deg[0]) << '\t' << num(e.azimuth_deg[1]) << '\t' << e.seed << '\t'
     << e.overlap_begin << '\t' << e.overlap_end;
  return os.str();
}

ManifestEntry parse_manifest_line(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, '\t')) f.push_back(item);
  if (f.size() != kManifestColumns) {
    throw DataError("manifest: expected " + std::to_string(kManifestColumns) +
                    " columns, got " + std::to_string(f.size()));
  }
  ManifestEntry e;
  try {
    e.id = f[0];
    e.mixture = f[1];
    e.targets[0] = f[2];
    e.targets[1] = f[3];
    e.way = parse_overlap_way(f[4]);
    e.overlap_ratio = std::stod(f[5]);
    e.snr_db = std::stod(f[6]);
    e.azimuth_deg[0] = std::stod(f[7]);
    e.azimuth_deg[1] = std::stod(f[8]);
    e.seed = std::stoull(f[9]);
    e.overlap_begin = std::stoul(f[10]);
    e.overlap_end = std::stoul(f[11]);
  } catch (const std::logic_error& err) {
    throw DataError("manifest: bad field in line '" + line + "': " + err.what());
  }
  return e;
}

std::vector<ManifestEntry> write_dataset(const DatasetConfig& config, const std::string& dir) {
  config.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("dataset: cannot create " + dir + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  entries.reserve(config.count);
  for (std::size_t i = 0; i < config.count; ++i) {
    const MixtureExample ex = make_example(config, i);
    ManifestEntry e;
    e.id = ex.id;
    e.mixture = ex.id + "_mix.wav";
    e.way = ex.spec.way;
    e.overlap_ratio = ex.spec.overlap_ratio;
    e.snr_db = ex.spec.snr_db;
    e.azimuth_deg[0] = ex.spec.azimuth_deg[0];
    e.azimuth_deg[1] = ex.spec.azimuth_deg[1];
    e.seed = ex.spec.seed;
    e.overlap_begin = ex.overlap_begin;
    e.overlap_end = ex.overlap_end;
    write_wav((fs::path(dir) / e.mixture).string(), ex.mixture);
    for (int n = 0; n < 2; ++n) {
      e.targets[n] = ex.id + "_s" + std::to_string(n) + ".wav";
      write_wav((fs::path(dir) / e.targets[n]).string(),
                Waveform::mono(config.sample_rate, ex.targets[n]));
    }
    entries.push_back(std::move(e));
  }
  const std::string path = (fs::path(dir) / kManifestName).string();
  std::ofstream os(path);
  if (!os) throw DataError("dataset: cannot write " + path);
  os << manifest_header() << '\n';
  for (const auto& e : entries) os << manifest_line(e) << '\n';
  if (!os) throw DataError("dataset: write failed for " + path);
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::string& dir) {
  const std::string path = (fs::path(dir) / kManifestName).string();
  std::ifstream is(path);
  if (!is) throw DataError("dataset: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != manifest_header()) {
    throw DataError("dataset: " + path + " lacks the manifest header");
  }
  std::vector<ManifestEntry> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_manifest_line(line));
    } catch (const DataError& err) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + err.what());
    }
  }
  return out;
}

SimulatedSource::SimulatedSource(DatasetConfig config) : config_(std::move(config)) {
  config_.validate();
}

Utterance SimulatedSource::get(std::size_t index) const {
  if (index >= config_.count) throw std::out_of_range("SimulatedSource: index out of range");
  MixtureExample ex = make_example(config_, index);
  return {std::move(ex.id), std::move(ex.mixture), std::move(ex.targets)};
}

DirectorySource::DirectorySource(std::string dir)
    : dir_(std::move(dir)), entries_(read_manifest(dir_)) {}

Utterance DirectorySource::get(std::size_t index) const {
  const ManifestEntry& e = entries_.at(index);
  Utterance u;
  u.id = e.id;
  u.mixture = read_wav((fs::path(dir_) / e.mixture).string());
  for (int n = 0; n < 2; ++n) {
    const std::string path = (fs::path(dir_) / e.targets[n]).string();
    Waveform t = read_wav(path);
    if (t.channels != 1 || t.samples() != u.mixture.samples() ||
        t.sample_rate != u.mixture.sample_rate) {
      throw DataError("dataset: " + path + " does not match its mixture");
    }
    u.targets.push_back(std::move(t.data));
  }
  return u;
}

}  // namespace nbsep
