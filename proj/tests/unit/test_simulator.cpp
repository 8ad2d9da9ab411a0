// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "nbsep/simulator.hpp"
#include "nbsep/stft.hpp"
#include "nbsep/wav.hpp"
#include "test_util.hpp"

using namespace nbsep;
using nbsep::testing::random_vector;

namespace {

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "nbsep_unit";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

double rms(const std::vector<double>& x) {
  double e = 0;
  for (double v : x) e += v * v;
  return std::sqrt(e / double(x.size()));
}

// Hand-assembled 16-bit PCM file.
void write_i16(const std::string& path, const std::vector<std::int16_t>& s,
               std::uint16_t channels, std::uint32_t rate, std::uint16_t bits = 16) {
  std::ofstream os(path, std::ios::binary);
  auto u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };
  const std::uint32_t bytes = std::uint32_t(s.size() * 2);
  os.write("RIFF", 4);
  u32(36 + bytes);
  os.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(channels);
  u32(rate);
  u32(rate * channels * 2);
  u16(std::uint16_t(channels * 2));
  u16(bits);
  os.write("data", 4);
  u32(bytes);
  os.write(reinterpret_cast<const char*>(s.data()), std::streamsize(bytes));
}

MixtureSpec spec_of(OverlapWay way, double ratio, double snr, std::uint64_t seed = 1) {
  MixtureSpec s;
  s.way = way;
  s.overlap_ratio = ratio;
  s.snr_db = snr;
  s.sample_rate = 8000;
  s.length_s = 1.0;
  s.seed = seed;
  return s;
}

Waveform noise_image(std::size_t channels, std::size_t samples, std::uint64_t seed) {
  Waveform w(8000, channels, samples);
  w.data = random_vector(channels * samples, seed);
  return w;
}

}  // namespace

TEST_CASE("wav: float round trip is lossless and interleaved") {
  Waveform w(16000, 3, 50);
  auto r = random_vector(150, 1);
  for (std::size_t i = 0; i < r.size(); ++i) w.data[i] = double(float(r[i]));
  const auto path = temp_path("rt.wav");
  write_wav(path, w);
  auto back = read_wav(path);
  CHECK(back.sample_rate == 16000);
  CHECK(back.channels == 3);
  REQUIRE(back.samples() == 50);
  for (std::size_t i = 0; i < w.data.size(); ++i) CHECK(back.data[i] == w.data[i]);
  CHECK(back.at(7, 2) == w.at(7, 2));
}

TEST_CASE("wav: 16-bit PCM is read and other formats are rejected") {
  const auto path = temp_path("pcm.wav");
  write_i16(path, {0, 16384, -32768, 32767}, 2, 8000);
  auto w = read_wav(path);
  CHECK(w.channels == 2);
  CHECK(w.samples() == 2);
  CHECK(w.at(0, 1) == 0.5);
  CHECK(w.at(1, 0) == -1.0);
  CHECK(w.at(1, 1) == doctest::Approx(32767.0 / 32768.0));

  const auto bad = temp_path("pcm8.wav");
  write_i16(bad, {0, 1}, 1, 8000, 8);
  CHECK_THROWS_AS(read_wav(bad), DataError);
  CHECK_THROWS_AS(read_wav(temp_path("missing.wav")), DataError);
  std::ofstream(temp_path("junk.wav")) << "not audio";
  CHECK_THROWS_AS(read_wav(temp_path("junk.wav")), DataError);
}

TEST_CASE("synth_source: determinism, unit RMS and length check") {
  for (auto kind : {SourceKind::AmNoise, SourceKind::Multitone}) {
    auto a = synth_source(kind, 4000, 8000, 9);
    auto b = synth_source(kind, 4000, 8000, 9);
    auto c = synth_source(kind, 4000, 8000, 10);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(std::abs(rms(a) - 1.0) < 1e-6);
  }
  CHECK_THROWS_AS(synth_source(SourceKind::AmNoise, 1999, 8000, 1), std::invalid_argument);
  CHECK_NOTHROW(synth_source(SourceKind::AmNoise, 2000, 8000, 1));
}

TEST_CASE("synth_source: file sources") {
  Waveform w(8000, 2, 3000);
  w.data = random_vector(6000, 3);
  const auto path = temp_path("src.wav");
  write_wav(path, w);
  auto x = synth_source(SourceKind::File, 4000, 8000, 0, path);
  CHECK(x.size() == 4000);
  CHECK(std::abs(rms(x) - 1.0) < 1e-6);
  CHECK(x[3500] == 0.0);
  CHECK(x[1] / x[0] == doctest::Approx(double(float(w.at(1, 0))) / double(float(w.at(0, 0)))));
  CHECK_THROWS_AS(synth_source(SourceKind::File, 4000, 16000, 0, path), DataError);
  const auto bad = temp_path("src8.wav");
  write_i16(bad, std::vector<std::int16_t>(4000, 1), 1, 8000, 8);
  CHECK_THROWS_AS(synth_source(SourceKind::File, 4000, 8000, 0, bad), DataError);
}

TEST_CASE("synth_tones: a single tone peaks at its frequency in every frame") {
  const double f0 = 1000.0, rate = 8000.0;
  auto x = synth_tones({f0}, 4000, rate, 4);
  StftConfig cfg;
  cfg.window_length = 128;
  auto spec = stft(Waveform::mono(rate, x), cfg);
  const std::size_t expect = std::size_t(std::lround(f0 * 128 / rate));
  for (std::size_t t = 2; t + 2 < spec.frames; ++t) {
    std::size_t best = 0;
    for (std::size_t f = 1; f < spec.freqs; ++f)
      if (std::abs(spec.at(f, t, 0)) > std::abs(spec.at(best, t, 0))) best = f;
    CHECK(best == expect);
  }
  // Direct DFT of one windowed frame as an independent check.
  const auto w = hann_window(128);
  double peak = 0;
  std::size_t arg = 0;
  for (std::size_t k = 0; k <= 64; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t m = 0; m < 128; ++m)
      acc += w[m] * x[1000 + m] *
             std::polar(1.0, -2.0 * std::numbers::pi * double(k * m) / 128.0);
    if (std::abs(acc) > peak) {
      peak = std::abs(acc);
      arg = k;
    }
  }
  CHECK(arg == expect);
}

TEST_CASE("propagate: identities and the endfire delay") {
  auto s = random_vector(2000, 5);
  auto one = propagate(s, ArrayGeometry::circular(1), 37.0, 8000);
  REQUIRE(one.channels == 1);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(one.at(i, 0) == s[i]);

  ArrayGeometry pair;
  pair.mics = {{0.05, 0.0, 0.0}, {-0.05, 0.0, 0.0}};
  auto broad = propagate(s, pair, 90.0, 16000);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(broad.at(i, 0) == broad.at(i, 1));

  // Endfire from +x: mic 1 hears the wave 0.1/343 s (4.66 samples) later.
  auto end = propagate(s, pair, 0.0, 16000);
  const double expect = 0.1 / kSpeedOfSound * 16000.0;
  long best_lag = 0;
  double best = -1e300;
  for (long lag = -10; lag <= 10; ++lag) {
    double acc = 0;
    for (long n = 50; n < 1950; ++n) acc += end.at(std::size_t(n), 0) * end.at(std::size_t(n + lag), 1);
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  CHECK(best_lag == std::lround(expect));

  // Fractional accuracy on a band-limited tone, away from the edges.
  std::vector<double> tone(2000);
  const double w = 2.0 * std::numbers::pi * 500.0 / 16000.0;
  for (std::size_t i = 0; i < tone.size(); ++i) tone[i] = std::sin(w * double(i));
  auto td = propagate(tone, pair, 0.0, 16000);
  for (std::size_t n = 100; n < 1900; ++n) {
    CHECK(std::abs(td.at(n, 0) - std::sin(w * (double(n) + expect / 2))) < 1e-3);
    CHECK(std::abs(td.at(n, 1) - std::sin(w * (double(n) - expect / 2))) < 1e-3);
  }
}

TEST_CASE("overlap_mix: full overlap of identical images") {
  auto img = noise_image(3, 8000, 6);
  auto ex = overlap_mix(img, img, spec_of(OverlapWay::Full, 1.0, 0.0));
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(ex.mixture.data[i] == 2.0 * img.data[i]);
  CHECK(ex.targets[0] == ex.targets[1]);
  CHECK(ex.targets[0] == img.channel(0));
}

TEST_CASE("overlap_mix: ratio, additivity and SNR for every way") {
  const double r = 0.37;
  for (auto way : {OverlapWay::HeadTail, OverlapWay::Middle, OverlapWay::StartOrEnd}) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      CAPTURE(to_string(way));
      auto ex = overlap_mix(noise_image(2, 8000, 10 + seed), noise_image(2, 8000, 20 + seed),
                            spec_of(way, r, 3.5, seed));
      const double len = double(ex.overlap_end - ex.overlap_begin);
      CHECK(std::abs(len / 8000.0 - r) <= 1.0 / 8000.0);
      for (std::size_t i = 0; i < ex.mixture.data.size(); ++i)
        CHECK(ex.mixture.data[i] == ex.images[0].data[i] + ex.images[1].data[i]);
      double e0 = 0, e1 = 0;
      for (std::size_t i = ex.overlap_begin; i < ex.overlap_end; ++i) {
        e0 += ex.targets[0][i] * ex.targets[0][i];
        e1 += ex.targets[1][i] * ex.targets[1][i];
      }
      CHECK(10 * std::log10(e0 / e1) == doctest::Approx(3.5).epsilon(1e-9));
      // Each speaker is silent outside its own region.
      const auto p = place(spec_of(way, r, 3.5, seed));
      for (int n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 8000; ++i)
          if (i < p.begin[n] || i >= p.begin[n] + p.length[n]) CHECK(ex.targets[n][i] == 0.0);
      if (way == OverlapWay::HeadTail) {
        CHECK(p.begin[0] == 0);
        CHECK(p.begin[1] + p.length[1] == 8000);
        CHECK(p.length[0] < 8000);
        CHECK(p.begin[1] > 0);
      } else if (way == OverlapWay::Middle) {
        CHECK(p.begin[1] > 0);
        CHECK(p.begin[1] + p.length[1] < 8000);
      } else {
        CHECK((p.begin[1] == 0 || p.begin[1] + p.length[1] == 8000));
      }
    }
  }
}

TEST_CASE("overlap_mix: incompatible ratios are rejected") {
  auto a = noise_image(2, 8000, 1), b = noise_image(2, 8000, 2);
  CHECK_THROWS_AS(overlap_mix(a, b, spec_of(OverlapWay::Full, 0.5, 0)), std::invalid_argument);
  CHECK_THROWS_AS(overlap_mix(a, b, spec_of(OverlapWay::Middle, 1.0, 0)), std::invalid_argument);
  CHECK_THROWS_AS(overlap_mix(a, b, spec_of(OverlapWay::HeadTail, 0.05, 0)), std::invalid_argument);
  CHECK_THROWS_AS(overlap_mix(a, b, spec_of(OverlapWay::HeadTail, 0.5, 6.0)), std::invalid_argument);
  CHECK_THROWS_AS(overlap_mix(a, noise_image(3, 8000, 2), spec_of(OverlapWay::Full, 1.0, 0)),
                  DataError);
}

TEST_CASE("make_dataset: bookkeeping, determinism and split separation") {
  DatasetConfig cfg;
  cfg.count = 0;
  CHECK(make_dataset(cfg).empty());
  cfg.count = 8;
  cfg.seed = 3;
  auto a = make_dataset(cfg);
  auto b = make_dataset(cfg);
  REQUIRE(a.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(a[i].mixture.data == b[i].mixture.data);
    CHECK(a[i].spec.way == static_cast<OverlapWay>(i % 4));
    CHECK(a[i].mixture.channels == 4);
    CHECK(a[i].mixture.samples() == 8000);
  }
  CHECK(a[0].spec.azimuth_deg[0] == a[3].spec.azimuth_deg[0]);
  CHECK(a[0].spec.azimuth_deg[0] != a[4].spec.azimuth_deg[0]);
  CHECK(a[3].spec.overlap_ratio == 1.0);
  CHECK(a[0].id == "train-000000");

  DatasetConfig v = cfg;
  v.split = Split::Validation;
  CHECK(make_example(v, 0).mixture.data != a[0].mixture.data);
  CHECK(example_seed(Split::Train, 3, 5) != example_seed(Split::Validation, 3, 5));
  CHECK((example_seed(Split::Test, 0xFFFF, 0xFFFFFFFF) >> 62) == 2);
}

TEST_CASE("sample_spec: SNR is uniform on [-5, 5] (KS statistic < 0.02)") {
  DatasetConfig cfg;
  cfg.seed = 11;
  std::vector<double> snr;
  for (std::size_t i = 0; i < 10000; ++i) snr.push_back(sample_spec(cfg, i).snr_db);
  std::sort(snr.begin(), snr.end());
  double d = 0;
  for (std::size_t i = 0; i < snr.size(); ++i) {
    const double cdf = (snr[i] + 5.0) / 10.0;
    d = std::max({d, std::abs(cdf - double(i) / 1e4), std::abs(cdf - double(i + 1) / 1e4)});
  }
  CHECK(d < 0.02);
  CHECK(snr.front() >= -5.0);
  CHECK(snr.back() <= 5.0);
  for (std::size_t i = 0; i < 400; ++i) {
    auto s = sample_spec(cfg, i);
    if (s.way != OverlapWay::Full) {
      CHECK(s.overlap_ratio >= 0.1);
      CHECK(s.overlap_ratio < 1.0);
    }
  }
}

TEST_CASE("generated images follow the narrow-band steering model") {
  DatasetConfig cfg;
  cfg.seed = 21;
  auto ex = make_example(cfg, 3);  // full overlap: both speakers active throughout
  StftConfig sc;
  sc.window_length = 128;
  for (int n = 0; n < 2; ++n) {
    auto spec = stft(ex.images[n], sc);
    std::vector<double> dev;
    for (std::size_t f = 4; f < spec.freqs - 4; ++f)
      for (std::size_t c = 1; c < 4; ++c) {
        std::vector<std::complex<double>> ratio;
        for (std::size_t t = 3; t + 3 < spec.frames; ++t)
          ratio.push_back(spec.at(f, t, c) / spec.at(f, t, 0));
        std::vector<double> re, im;
        for (auto z : ratio) {
          re.push_back(z.real());
          im.push_back(z.imag());
        }
        std::nth_element(re.begin(), re.begin() + re.size() / 2, re.end());
        std::nth_element(im.begin(), im.begin() + im.size() / 2, im.end());
        const std::complex<double> med(re[re.size() / 2], im[im.size() / 2]);
        for (auto z : ratio) dev.push_back(std::abs(z - med) / std::abs(med));
      }
    std::nth_element(dev.begin(), dev.begin() + dev.size() / 2, dev.end());
    CHECK(dev[dev.size() / 2] < 0.05);
  }
}
