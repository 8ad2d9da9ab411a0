// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// On-disk datasets and lazy example access for training and evaluation.
//
// A dataset directory holds manifest.tsv plus, for every example <id>,
// <id>_mix.wav (C channels) and <id>_s0.wav, <id>_s1.wav (reference-channel
// targets), all 32-bit float. The manifest has a header line and one
// tab-separated line per example:
//
//   id mixture target0 target1 way ratio snr_db azimuth0 azimuth1 seed
//   overlap_begin overlap_end
//
// Paths are relative to the manifest's directory.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nbsep/audio.hpp"
#include "nbsep/simulator.hpp"

namespace nbsep {

inline constexpr const char* kManifestName = "manifest.tsv";

struct ManifestEntry {
  std::string id;
  std::string mixture;
  std::string targets[2];
  OverlapWay way = OverlapWay::Full;
  double overlap_ratio = 1.0;
  double snr_db = 0.0;
  double azimuth_deg[2] = {0.0, 0.0};
  std::uint64_t seed = 0;
  std::size_t overlap_begin = 0, overlap_end = 0;
};

std::string manifest_header();
std::string manifest_line(const ManifestEntry& entry);
ManifestEntry parse_manifest_line(const std::string& line);

/// Generates config.count examples into `dir` (created if needed).
std::vector<ManifestEntry> write_dataset(const DatasetConfig& config, const std::string& dir);

/// Reads `dir`/manifest.tsv. Raises DataError naming the path on failure.
std::vector<ManifestEntry> read_manifest(const std::string& dir);

/// One training or evaluation utterance.
struct Utterance {
  std::string id;
  Waveform mixture;
  std::vector<std::vector<double>> targets;  // reference channel per speaker
};

/// Indexed access that produces utterances on demand, so a dataset never has
/// to be resident in memory.
class ExampleSource {
 public:
  virtual ~ExampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Utterance get(std::size_t index) const = 0;
};

/// Regenerates example i of a simulated dataset from its seed.
class SimulatedSource : public ExampleSource {
 public:
  explicit SimulatedSource(DatasetConfig config);
  std::size_t size() const override { return config_.count; }
  Utterance get(std::size_t index) const override;
  const DatasetConfig& config() const { return config_; }

 private:
  DatasetConfig config_;
};

/// Reads example i of a dataset directory from its WAV files.
class DirectorySource : public ExampleSource {
 public:
  explicit DirectorySource(std::string dir);
  std::size_t size() const override { return entries_.size(); }
  Utterance get(std::size_t index) const override;
  const std::vector<ManifestEntry>& entries() const { return entries_; }

 private:
  std::string dir_;
  std::vector<ManifestEntry> entries_;
};

/// Fixed list of utterances (tests and small evaluations).
class MemorySource : public ExampleSource {
 public:
  explicit MemorySource(std::vector<Utterance> items) : items_(std::move(items)) {}
  std::size_t size() const override { return items_.size(); }
  Utterance get(std::size_t index) const override { return items_.at(index); }

 private:
  std::vector<Utterance> items_;
};

}  // namespace nbsep
