// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nbsep/audio.hpp"

namespace nbsep {

inline constexpr double kSpeedOfSound = 343.0;

enum class SourceKind { AmNoise, Multitone, File };
enum class OverlapWay { HeadTail, Middle, StartOrEnd, Full };
enum class Split { Train = 0, Validation = 1, Test = 2 };

std::string to_string(SourceKind kind);
std::string to_string(OverlapWay way);
std::string to_string(Split split);
SourceKind parse_source_kind(const std::string& name);
OverlapWay parse_overlap_way(const std::string& name);
Split parse_split(const std::string& name);

struct ArrayGeometry {
  std::vector<std::array<double, 3>> mics;  // metres

  /// Horizontal circle, mic 0 on the +x axis, counter-clockwise.
  static ArrayGeometry circular(std::size_t channels, double radius = 0.05);
  std::size_t channels() const { return mics.size(); }
  void validate() const;
};

struct MixtureSpec {
  OverlapWay way = OverlapWay::Full;
  double overlap_ratio = 1.0;
  double snr_db = 0.0;            // speaker 0 over speaker 1, overlapped region
  double azimuth_deg[2] = {0.0, 90.0};
  double length_s = 1.0;
  double sample_rate = 8000.0;
  std::uint64_t seed = 0;         // placement choices and source signals
  std::size_t reference_channel = 0;

  std::size_t samples() const;
  void validate() const;
};

/// Speech-like amplitude-modulated noise, a sum of amplitude-modulated tones,
/// or the first channel of a WAV file (its rate must match). Unit RMS.
std::vector<double> synth_source(SourceKind kind, std::size_t length, double rate,
                                 std::uint64_t seed, const std::string& path = "");

/// Fixed tones with the same envelope as the multitone source. Unit RMS.
std::vector<double> synth_tones(const std::vector<double>& freqs_hz,
                                std::size_t length, double rate, std::uint64_t seed,
                                bool modulate = true);

/// Far-field plane wave from `azimuth_deg` in the horizontal plane. Channel
/// c is delayed by -((d_c - centroid) . u) / 343 s with a Kaiser-windowed sinc
/// of `taps` taps; integer delays are exact shifts. Output length equals the
/// input length.
Waveform propagate(const std::vector<double>& source, const ArrayGeometry& geometry,
                   double azimuth_deg, double rate, std::size_t taps = 32);

/// Result of placing two spatial images. images[n] is speaker n's placed,
/// SNR-scaled C-channel image; mixture is their sum.
struct MixtureExample {
  Waveform mixture;
  std::vector<Waveform> images;
  std::vector<std::vector<double>> targets;  // reference channel of each image
  MixtureSpec spec;
  std::size_t overlap_begin = 0, overlap_end = 0;  // sample range
  std::string id;
};

/// Region occupied by each speaker for a way and ratio on `samples` samples.
struct Placement {
  std::size_t begin[2] = {0, 0};
  std::size_t length[2] = {0, 0};
  std::size_t overlap_begin = 0, overlap_end = 0;
};
Placement place(const MixtureSpec& spec);

/// Cuts speaker n's image to its placement (from the image's start), zero
/// pads the rest, rescales speaker 1 to the requested SNR and sums.
MixtureExample overlap_mix(const Waveform& image0, const Waveform& image1,
                           const MixtureSpec& spec);

struct DatasetConfig {
  std::size_t count = 0;
  std::uint64_t seed = 0;
  Split split = Split::Train;
  double sample_rate = 8000.0;
  double length_s = 1.0;
  std::size_t channels = 4;
  double radius = 0.05;
  std::size_t taps = 32;
  SourceKind source = SourceKind::AmNoise;
  double ratio_min = 0.10, ratio_max = 1.00;
  double snr_min = -5.0, snr_max = 5.0;
  double max_separation_deg = 180.0;
  std::vector<std::string> source_files;  // for SourceKind::File

  void validate() const;
  /// "data.*" keys; source_files is comma separated.
  std::map<std::string, std::string> to_map() const;
  static DatasetConfig from_map(const std::map<std::string, std::string>& kv);
};

/// Spec of example `index`: pair index/4 shares sources and directions, the
/// way cycles through head-tail, middle, start-or-end and full.
MixtureSpec sample_spec(const DatasetConfig& config, std::size_t index);
MixtureExample make_example(const DatasetConfig& config, std::size_t index);
std::vector<MixtureExample> make_dataset(const DatasetConfig& config);

/// Seed for example `index` of a split; the split occupies the top bits so
/// the ranges never meet.
std::uint64_t example_seed(Split split, std::uint64_t seed, std::uint64_t index);

}  // namespace nbsep
