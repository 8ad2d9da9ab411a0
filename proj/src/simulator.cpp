// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/simulator.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "nbsep/wav.hpp"
#include "format.hpp"
#include "seed_mix.hpp"

namespace nbsep {

using detail::mix_seed;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kKaiserBeta = 8.0;
constexpr double kMinSourceSeconds = 0.25;

// RBJ cookbook biquad, direct form I.
struct Biquad {
  double b0, b1, b2, a1, a2;

  static Biquad lowpass(double cutoff, double rate) {
    return make(cutoff, rate, false);
  }
  static Biquad highpass(double cutoff, double rate) {
    return make(cutoff, rate, true);
  }
  static Biquad make(double cutoff, double rate, bool high) {
    const double w = 2.0 * kPi * cutoff / rate;
    const double alpha = std::sin(w) / std::numbers::sqrt2;  // Q = 1/sqrt(2)
    const double c = std::cos(w);
    const double a0 = 1.0 + alpha;
    Biquad q;
    if (high) {
      q.b0 = (1.0 + c) / 2.0 / a0;
      q.b1 = -(1.0 + c) / a0;
    } else {
      q.b0 = (1.0 - c) / 2.0 / a0;
      q.b1 = (1.0 - c) / a0;
    }
    q.b2 = q.b0;
    q.a1 = -2.0 * c / a0;
    q.a2 = (1.0 - alpha) / a0;
    return q;
  }
  void run(std::vector<double>& x) const {
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (double& v : x) {
      const double y = b0 * v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = v;
      y2 = y1;
      y1 = y;
      v = y;
    }
  }
};

void normalize_rms(std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  if (e <= 0.0) throw DataError("source signal is silent");
  const double g = 1.0 / std::sqrt(e / double(x.size()));
  for (double& v : x) v *= g;
}

// Syllable-rate envelope between 0.1 and 1.
std::vector<double> am_envelope(std::size_t length, double rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> rate_hz(2.0, 8.0), phase(0.0, 2.0 * kPi);
  const double f = rate_hz(rng), p = phase(rng);
  std::vector<double> env(length);
  for (std::size_t i = 0; i < length; ++i) {
    env[i] = 0.1 + 0.9 * 0.5 * (1.0 - std::cos(2.0 * kPi * f * double(i) / rate + p));
  }
  return env;
}

void check_length(std::size_t length, double rate) {
  if (rate <= 0.0) throw std::invalid_argument("source: sample rate must be > 0");
  if (double(length) < kMinSourceSeconds * rate - 1e-9) {
    throw std::invalid_argument("source: " + std::to_string(length) +
                                " samples is shorter than 0.25 s at " +
                                std::to_string(rate) + " Hz");
  }
}

double kaiser(double t) {
  if (std::abs(t) > 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - t * t)) /
         std::cyl_bessel_i(0.0, kKaiserBeta);
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  return std::sin(kPi * x) / (kPi * x);
}

void require_energy(double e, const char* who) {
  if (e <= 0.0) {
    throw DataError(std::string("overlap_mix: ") + who +
                    " has no energy in the overlapped region");
  }
}

}  // namespace

std::string to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::AmNoise: return "am-noise";
    case SourceKind::Multitone: return "multitone";
    case SourceKind::File: return "file";
  }
  return "?";
}

std::string to_string(OverlapWay way) {
  switch (way) {
    case OverlapWay::HeadTail: return "head-tail";
    case OverlapWay::Middle: return "middle";
    case OverlapWay::StartOrEnd: return "start-or-end";
    case OverlapWay::Full: return "full";
  }
  return "?";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

SourceKind parse_source_kind(const std::string& name) {
  if (name == "am-noise") return SourceKind::AmNoise;
  if (name == "multitone") return SourceKind::Multitone;
  if (name == "file") return SourceKind::File;
  throw std::invalid_argument("unknown source kind '" + name +
                              "' (expected am-noise, multitone or file)");
}

OverlapWay parse_overlap_way(const std::string& name) {
  if (name == "head-tail") return OverlapWay::HeadTail;
  if (name == "middle") return OverlapWay::Middle;
  if (name == "start-or-end") return OverlapWay::StartOrEnd;
  if (name == "full") return OverlapWay::Full;
  throw std::invalid_argument("unknown overlap way '" + name + "'");
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Validation;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + name + "' (train, val or test)");
}

ArrayGeometry ArrayGeometry::circular(std::size_t channels, double radius) {
  ArrayGeometry g;
  for (std::size_t c = 0; c < channels; ++c) {
    const double a = 2.0 * kPi * double(c) / double(channels);
    g.mics.push_back({channels == 1 ? 0.0 : radius * std::cos(a),
                      channels == 1 ? 0.0 : radius * std::sin(a), 0.0});
  }
  g.validate();
  return g;
}

void ArrayGeometry::validate() const {
  if (mics.empty()) throw std::invalid_argument("array: needs at least one mic");
  for (std::size_t i = 0; i < mics.size(); ++i) {
    for (std::size_t j = i + 1; j < mics.size(); ++j) {
      if (mics[i] == mics[j]) {
        throw std::invalid_argument("array: mics " + std::to_string(i) + " and " +
                                    std::to_string(j) + " coincide");
      }
    }
  }
}

std::size_t MixtureSpec::samples() const {
  return static_cast<std::size_t>(std::lround(length_s * sample_rate));
}

void MixtureSpec::validate() const {
  if (!(overlap_ratio >= 0.10 - 1e-12 && overlap_ratio <= 1.0 + 1e-12)) {
    throw std::invalid_argument("mixture: overlap ratio " +
                                std::to_string(overlap_ratio) +
                                " outside [0.10, 1.00]");
  }
  if (!(snr_db >= -5.0 - 1e-12 && snr_db <= 5.0 + 1e-12)) {
    throw std::invalid_argument("mixture: SNR " + std::to_string(snr_db) +
                                " dB outside [-5, 5]");
  }
  const bool full_ratio = std::abs(overlap_ratio - 1.0) < 1e-12;
  if (way == OverlapWay::Full && !full_ratio) {
    throw std::invalid_argument("mixture: full overlap requires ratio 1, got " +
                                std::to_string(overlap_ratio));
  }
  if (way != OverlapWay::Full && full_ratio) {
    throw std::invalid_argument("mixture: " + to_string(way) +
                                " overlap requires ratio < 1");
  }
  if (samples() < 2) throw std::invalid_argument("mixture: utterance too short");
}

std::vector<double> synth_source(SourceKind kind, std::size_t length, double rate,
                                 std::uint64_t seed, const std::string& path) {
  check_length(length, rate);
  std::mt19937_64 rng(mix_seed(seed, 0x5eed));
  std::vector<double> x(length);
  switch (kind) {
    case SourceKind::AmNoise: {
      std::normal_distribution<double> gauss;
      for (double& v : x) v = gauss(rng);
      std::uniform_real_distribution<double> cut(0.2 * rate, 0.45 * rate), tilt(0.3, 0.8);
      Biquad::highpass(80.0, rate).run(x);
      Biquad::lowpass(cut(rng), rate).run(x);
      // One-pole spectral tilt.
      const double a = tilt(rng);
      double prev = 0.0;
      for (double& v : x) {
        prev = v + a * prev;
        v = prev;
      }
      const auto env = am_envelope(length, rate, rng);
      for (std::size_t i = 0; i < length; ++i) x[i] *= env[i];
      break;
    }
    case SourceKind::Multitone: {
      std::uniform_real_distribution<double> freq(100.0, 0.45 * rate);
      std::vector<double> freqs(8);
      for (double& f : freqs) f = freq(rng);
      return synth_tones(freqs, length, rate, mix_seed(seed, 0x70e5), true);
    }
    case SourceKind::File: {
      const Waveform w = read_wav(path);
      if (std::abs(w.sample_rate - rate) > 1e-9) {
        throw DataError("source: " + path + " has rate " +
                        std::to_string(w.sample_rate) + ", expected " +
                        std::to_string(rate));
      }
      if (double(w.samples()) < kMinSourceSeconds * rate) {
        throw DataError("source: " + path + " is shorter than 0.25 s");
      }
      for (std::size_t i = 0; i < length && i < w.samples(); ++i) x[i] = w.at(i, 0);
      break;
    }
  }
  normalize_rms(x);
  return x;
}

std::vector<double> synth_tones(const std::vector<double>& freqs_hz,
                                std::size_t length, double rate, std::uint64_t seed,
                                bool modulate) {
  check_length(length, rate);
  if (freqs_hz.empty()) throw std::invalid_argument("tones: no frequencies");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi), amp(0.5, 1.0);
  std::vector<double> x(length, 0.0);
  for (double f : freqs_hz) {
    if (!(f > 0.0 && f < rate / 2.0)) {
      throw std::invalid_argument("tones: " + std::to_string(f) +
                                  " Hz is outside (0, Nyquist)");
    }
    const double p = phase(rng), a = amp(rng);
    for (std::size_t i = 0; i < length; ++i) {
      x[i] += a * std::sin(2.0 * kPi * f * double(i) / rate + p);
    }
  }
  if (modulate) {
    const auto env = am_envelope(length, rate, rng);
    for (std::size_t i = 0; i < length; ++i) x[i] *= env[i];
  }
  normalize_rms(x);
  return x;
}

Waveform propagate(const std::vector<double>& source, const ArrayGeometry& geometry,
                   double azimuth_deg, double rate, std::size_t taps) {
  geometry.validate();
  if (taps < 2 || taps % 2 != 0) {
    throw std::invalid_argument("propagate: tap count must be even and >= 2");
  }
  const std::size_t C = geometry.channels(), L = source.size();
  std::array<double, 3> centroid{0.0, 0.0, 0.0};
  for (const auto& m : geometry.mics)
    for (int k = 0; k < 3; ++k) centroid[k] += m[k] / double(C);
  const double az = azimuth_deg * kPi / 180.0;
  const std::array<double, 3> u{std::cos(az), std::sin(az), 0.0};
  const long half = long(taps / 2);

  Waveform out(rate, C, L);
  for (std::size_t c = 0; c < C; ++c) {
    double proj = 0.0;
    for (int k = 0; k < 3; ++k) proj += (geometry.mics[c][k] - centroid[k]) * u[k];
    double delay = -proj / kSpeedOfSound * rate;
    // Snap round-off (e.g. cos(90 deg) != 0) so geometric zeros stay exact.
    if (std::abs(delay - std::round(delay)) < 1e-9) delay = std::round(delay);
    const double whole = std::floor(delay);
    const double frac = delay - whole;
    const long shift = long(whole);
    if (frac == 0.0) {
      for (std::size_t n = 0; n < L; ++n) {
        const long m = long(n) - shift;
        out.at(n, c) = (m >= 0 && m < long(L)) ? source[std::size_t(m)] : 0.0;
      }
      continue;
    }
    // h[k] for k = -half+1 .. half approximates x(n - shift - frac).
    std::vector<double> h(taps);
    for (long k = -half + 1; k <= half; ++k) {
      const double t = double(k) - frac;
      h[std::size_t(k + half - 1)] = sinc(t) * kaiser(t / double(half));
    }
    for (std::size_t n = 0; n < L; ++n) {
      double acc = 0.0;
      for (long k = -half + 1; k <= half; ++k) {
        const long m = long(n) - shift - k;
        if (m >= 0 && m < long(L)) acc += h[std::size_t(k + half - 1)] * source[std::size_t(m)];
      }
      out.at(n, c) = acc;
    }
  }
  return out;
}

Placement place(const MixtureSpec& spec) {
  spec.validate();
  const std::size_t L = spec.samples();
  const std::size_t O = std::size_t(std::lround(spec.overlap_ratio * double(L)));
  Placement p;
  std::mt19937_64 rng(mix_seed(spec.seed, 0x91ace));
  switch (spec.way) {
    case OverlapWay::Full:
      p.length[0] = p.length[1] = L;
      break;
    case OverlapWay::HeadTail:
      // Speaker 0 leads, speaker 1 trails, each with an exclusive end.
      if (O < 1 || O >= L) throw std::invalid_argument("mixture: overlap too short");
      p.length[0] = (L + O + 1) / 2;
      p.length[1] = L + O - p.length[0];
      p.begin[1] = L - p.length[1];
      break;
    case OverlapWay::Middle: {
      if (O < 1 || L - O < 2) {
        throw std::invalid_argument("mixture: middle overlap needs room on both sides");
      }
      p.length[0] = L;
      p.length[1] = O;
      std::uniform_int_distribution<std::size_t> off(1, L - O - 1);
      p.begin[1] = off(rng);
      break;
    }
    case OverlapWay::StartOrEnd: {
      if (O < 1) throw std::invalid_argument("mixture: overlap too short");
      p.length[0] = L;
      p.length[1] = O;
      p.begin[1] = (rng() & 1) ? L - O : 0;
      break;
    }
  }
  p.overlap_begin = std::max(p.begin[0], p.begin[1]);
  p.overlap_end = std::min(p.begin[0] + p.length[0], p.begin[1] + p.length[1]);
  return p;
}

MixtureExample overlap_mix(const Waveform& image0, const Waveform& image1,
                           const MixtureSpec& spec) {
  const Placement p = place(spec);
  const std::size_t L = spec.samples();
  const Waveform* img[2] = {&image0, &image1};
  const std::size_t C = image0.channels;
  if (image1.channels != C) {
    throw DataError("overlap_mix: images have " + std::to_string(C) + " and " +
                    std::to_string(image1.channels) + " channels");
  }
  if (spec.reference_channel >= C) {
    throw std::invalid_argument("overlap_mix: reference channel out of range");
  }
  MixtureExample ex;
  ex.spec = spec;
  ex.overlap_begin = p.overlap_begin;
  ex.overlap_end = p.overlap_end;
  for (int n = 0; n < 2; ++n) {
    if (img[n]->samples() < p.length[n]) {
      throw DataError("overlap_mix: image " + std::to_string(n) + " has " +
                      std::to_string(img[n]->samples()) + " samples, needs " +
                      std::to_string(p.length[n]));
    }
    Waveform placed(spec.sample_rate, C, L);
    for (std::size_t i = 0; i < p.length[n]; ++i)
      for (std::size_t c = 0; c < C; ++c) placed.at(p.begin[n] + i, c) = img[n]->at(i, c);
    ex.images.push_back(std::move(placed));
  }
  double e[2] = {0.0, 0.0};
  for (int n = 0; n < 2; ++n) {
    for (std::size_t i = p.overlap_begin; i < p.overlap_end; ++i) {
      const double v = ex.images[n].at(i, spec.reference_channel);
      e[n] += v * v;
    }
  }
  require_energy(e[0], "speaker 0");
  require_energy(e[1], "speaker 1");
  const double gain = std::sqrt(e[0] / (e[1] * std::pow(10.0, spec.snr_db / 10.0)));
  for (double& v : ex.images[1].data) v *= gain;

  ex.mixture = Waveform(spec.sample_rate, C, L);
  for (std::size_t i = 0; i < ex.mixture.data.size(); ++i) {
    ex.mixture.data[i] = ex.images[0].data[i] + ex.images[1].data[i];
  }
  for (int n = 0; n < 2; ++n) ex.targets.push_back(ex.images[n].channel(spec.reference_channel));
  return ex;
}

std::uint64_t example_seed(Split split, std::uint64_t seed, std::uint64_t index) {
  // Bits 62-63 hold the split, 32-61 the dataset seed, 0-31 the index.
  return (std::uint64_t(split) << 62) | ((seed & 0x3FFFFFFFULL) << 32) |
         (index & 0xFFFFFFFFULL);
}

MixtureSpec sample_spec(const DatasetConfig& config, std::size_t index) {
  MixtureSpec s;
  s.sample_rate = config.sample_rate;
  s.length_s = config.length_s;
  s.way = static_cast<OverlapWay>(index % 4);
  const std::uint64_t pair_seed = example_seed(config.split, config.seed, index / 4);
  std::mt19937_64 pair_rng(mix_seed(pair_seed, 1));
  std::uniform_real_distribution<double> az(0.0, 360.0),
      sep(0.0, config.max_separation_deg);
  s.azimuth_deg[0] = az(pair_rng);
  const double d = sep(pair_rng);
  s.azimuth_deg[1] = std::fmod(s.azimuth_deg[0] + ((pair_rng() & 1) ? d : -d) + 360.0, 360.0);

  s.seed = example_seed(config.split, config.seed, index);
  std::mt19937_64 rng(mix_seed(s.seed, 2));
  std::uniform_real_distribution<double> ratio(config.ratio_min, config.ratio_max),
      snr(config.snr_min, config.snr_max);
  // Ratio 1 belongs to the full way; the others keep two exclusive samples.
  const double r = ratio(rng);
  const double cap = double(s.samples() - 2) / double(s.samples());
  s.overlap_ratio = s.way == OverlapWay::Full ? 1.0 : std::min(r, cap);
  s.snr_db = snr(rng);
  return s;
}

MixtureExample make_example(const DatasetConfig& config, std::size_t index) {
  const MixtureSpec spec = sample_spec(config, index);
  const ArrayGeometry geo = ArrayGeometry::circular(config.channels, config.radius);
  const std::size_t L = spec.samples();
  const std::uint64_t pair_seed = example_seed(config.split, config.seed, index / 4);
  Waveform images[2];
  for (std::size_t n = 0; n < 2; ++n) {
    std::string path;
    if (config.source == SourceKind::File) {
      if (config.source_files.empty()) {
        throw std::invalid_argument("dataset: file sources need source_files");
      }
      path = config.source_files[(2 * (index / 4) + n) % config.source_files.size()];
    }
    const auto src = synth_source(config.source, L, config.sample_rate,
                                  mix_seed(pair_seed, 10 + n), path);
    images[n] = propagate(src, geo, spec.azimuth_deg[n], config.sample_rate, config.taps);
  }
  MixtureExample ex = overlap_mix(images[0], images[1], spec);
  char id[64];
  std::snprintf(id, sizeof id, "%s-%06zu", to_string(config.split).c_str(), index);
  ex.id = id;
  return ex;
}

std::vector<MixtureExample> make_dataset(const DatasetConfig& config) {
  std::vector<MixtureExample> out;
  out.reserve(config.count);
  for (std::size_t i = 0; i < config.count; ++i) out.push_back(make_example(config, i));
  return out;
}

void DatasetConfig::validate() const {
  auto bad = [](const std::string& why) { throw std::invalid_argument("dataset: " + why); };
  if (!(sample_rate > 0.0)) bad("sample_rate must be positive");
  if (!(length_s > 0.0)) bad("length_s must be positive");
  if (channels == 0) bad("channels must be at least 1");
  if (channels > 1 && !(radius > 0.0)) bad("radius must be positive");
  if (taps < 2 || taps % 2) bad("taps must be even and at least 2");
  if (!(ratio_min > 0.0 && ratio_min <= ratio_max && ratio_max <= 1.0)) {
    bad("need 0 < ratio_min <= ratio_max <= 1");
  }
  if (!(snr_min <= snr_max)) bad("need snr_min <= snr_max");
  if (!(max_separation_deg >= 0.0 && max_separation_deg <= 180.0)) {
    bad("max_separation_deg must lie in [0, 180]");
  }
  if (source == SourceKind::File && source_files.empty()) bad("file sources need source_files");
}

std::map<std::string, std::string> DatasetConfig::to_map() const {
  const auto num = detail::format_double;
  std::string files;
  for (std::size_t i = 0; i < source_files.size(); ++i) {
    files += (i ? "," : "") + source_files[i];
  }
  return {
      {"data.count", std::to_string(count)},
      {"data.seed", std::to_string(seed)},
      {"data.split", to_string(split)},
      {"data.sample_rate", num(sample_rate)},
      {"data.length_s", num(length_s)},
      {"data.channels", std::to_string(channels)},
      {"data.radius", num(radius)},
      {"data.taps", std::to_string(taps)},
      {"data.source", to_string(source)},
      {"data.ratio_min", num(ratio_min)},
      {"data.ratio_max", num(ratio_max)},
      {"data.snr_min", num(snr_min)},
      {"data.snr_max", num(snr_max)},
      {"data.max_separation_deg", num(max_separation_deg)},
      {"data.source_files", files},
  };
}

DatasetConfig DatasetConfig::from_map(const std::map<std::string, std::string>& kv) {
  DatasetConfig c;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto size = [&](const char* key, std::size_t& dst) {
    if (auto* v = get(key)) dst = std::stoul(*v);
  };
  auto real = [&](const char* key, double& dst) {
    if (auto* v = get(key)) dst = std::stod(*v);
  };
  size("data.count", c.count);
  if (auto* v = get("data.seed")) c.seed = std::stoull(*v);
  if (auto* v = get("data.split")) c.split = parse_split(*v);
  real("data.sample_rate", c.sample_rate);
  real("data.length_s", c.length_s);
  size("data.channels", c.channels);
  real("data.radius", c.radius);
  size("data.taps", c.taps);
  if (auto* v = get("data.source")) c.source = parse_source_kind(*v);
  real("data.ratio_min", c.ratio_min);
  real("data.ratio_max", c.ratio_max);
  real("data.snr_min", c.snr_min);
  real("data.snr_max", c.snr_max);
  real("data.max_separation_deg", c.max_separation_deg);
  if (auto* v = get("data.source_files")) {
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) c.source_files.push_back(item);
    }
  }
  return c;
}

}  // namespace nbsep
