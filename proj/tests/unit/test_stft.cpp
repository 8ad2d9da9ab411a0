// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "nbsep/stft.hpp"
#include "test_util.hpp"

using namespace nbsep;

namespace {

Waveform random_wave(double rate, std::size_t chans, std::size_t len,
                     std::uint64_t seed) {
  Waveform w(rate, chans, len);
  w.data = testing::random_vector(len * chans, seed);
  return w;
}

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST_CASE("stft: shape and zero input") {
  StftConfig cfg{128};
  Waveform w(8000, 3, 8000);
  auto spec = stft(w, cfg);
  CHECK(spec.freqs == 65);
  CHECK(spec.frames == 126);
  CHECK(spec.channels == 3);
  for (double v : spec.data) CHECK(v == 0.0);
  auto back = istft(spec, cfg);
  CHECK(back.samples() == 8000);
  for (double v : back.data) CHECK(v == 0.0);
}

TEST_CASE("stft: frame length follows the 32 ms rule") {
  CHECK(StftConfig::for_sample_rate(16000).window_length == 512);
  CHECK(StftConfig::for_sample_rate(8000).window_length == 256);
  CHECK(StftConfig{512}.hop() == 256);
}

TEST_CASE("stft: sinusoid at a bin centre peaks at that bin (direct DFT oracle)") {
  const std::size_t n = 128, k0 = 9, len = 2048;
  StftConfig cfg{n};
  Waveform w(8000, 1, len);
  for (std::size_t i = 0; i < len; ++i)
    w.at(i, 0) = std::cos(2 * std::numbers::pi * double(k0) * double(i) / double(n) + 0.3);
  auto spec = stft(w, cfg);
  const auto win = hann_window(n);
  for (std::size_t t = 2; t + 2 < spec.frames; ++t) {
    std::size_t best = 0;
    for (std::size_t f = 0; f < spec.freqs; ++f)
      if (std::abs(spec.at(f, t, 0)) > std::abs(spec.at(best, t, 0))) best = f;
    CHECK(best == k0);
    // Independent evaluation of the windowed DFT at the peak bin.
    const std::size_t start = t * cfg.hop() - (n - cfg.hop());
    std::complex<double> acc = 0;
    for (std::size_t m = 0; m < n; ++m)
      acc += win[m] * w.at(start + m, 0) *
             std::polar(1.0, -2 * std::numbers::pi * double(k0 * m) / double(n));
    CHECK(std::abs(acc - spec.at(k0, t, 0)) < 1e-9);
  }
}

TEST_CASE("stft: per-frame Parseval identity on interior frames") {
  const std::size_t n = 256;
  StftConfig cfg{n};
  auto w = random_wave(8000, 2, 4000, 4);
  auto spec = stft(w, cfg);
  const auto win = hann_window(n);
  for (std::size_t t = 1; t * cfg.hop() + cfg.hop() <= 4000; ++t)
    for (std::size_t c = 0; c < 2; ++c) {
      const std::size_t start = t * cfg.hop() - (n - cfg.hop());
      double time_energy = 0;
      for (std::size_t m = 0; m < n; ++m) {
        const double v = win[m] * w.at(start + m, c);
        time_energy += v * v;
      }
      double spec_energy = std::norm(spec.at(0, t, c)) + std::norm(spec.at(n / 2, t, c));
      for (std::size_t f = 1; f < n / 2; ++f) spec_energy += 2 * std::norm(spec.at(f, t, c));
      spec_energy /= double(n);
      CHECK(std::abs(time_energy - spec_energy) <= 1e-6 * time_energy);
    }
}

TEST_CASE("stft/istft: round trip at 8 and 16 kHz") {
  for (double rate : {8000.0, 16000.0}) {
    const auto cfg = StftConfig::for_sample_rate(rate);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto w = random_wave(rate, 4, std::size_t(rate) + 37 * seed, seed + 100);
      auto back = istft(stft(w, cfg), cfg);
      REQUIRE(back.data.size() == w.data.size());
      double err = 0;
      for (std::size_t i = 0; i < w.data.size(); ++i)
        err = std::max(err, std::abs(back.data[i] - w.data[i]));
      CHECK(err < 1e-6 * max_abs(w.data));
    }
  }
}

TEST_CASE("stft/istft: linearity") {
  StftConfig cfg{128};
  auto a = random_wave(8000, 2, 1000, 1), b = random_wave(8000, 2, 1000, 2);
  Waveform sum = a;
  for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += 2.5 * b.data[i];
  auto sa = stft(a, cfg), sb = stft(b, cfg), ss = stft(sum, cfg);
  for (std::size_t i = 0; i < ss.data.size(); ++i)
    CHECK(std::abs(ss.data[i] - (sa.data[i] + 2.5 * sb.data[i])) < 1e-9);

  ComplexSpectrogram ra(sa.freqs, sa.frames, 2), rb = ra;
  ra.config = rb.config = cfg;
  ra.num_samples = rb.num_samples = 1000;
  ra.data = testing::random_vector(ra.data.size(), 7);
  rb.data = testing::random_vector(rb.data.size(), 8);
  ComplexSpectrogram rs = ra;
  for (std::size_t i = 0; i < rs.data.size(); ++i) rs.data[i] += rb.data[i];
  auto ya = istft(ra, cfg), yb = istft(rb, cfg), ys = istft(rs, cfg);
  for (std::size_t i = 0; i < ys.data.size(); ++i)
    CHECK(std::abs(ys.data[i] - ya.data[i] - yb.data[i]) < 1e-9);
}

TEST_CASE("istft adjoint matches the transpose (dot-product test)") {
  StftConfig cfg{64};
  const std::size_t len = 500, frames = cfg.frames(len);
  auto spec = testing::random_vector(cfg.freqs() * frames * 2, 3);
  auto g = testing::random_vector(len, 4);
  auto y = synthesize<double>(cfg, spec, frames, len);
  auto gs = synthesize_adjoint<double>(cfg, g, frames);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < len; ++i) lhs += y[i] * g[i];
  for (std::size_t i = 0; i < spec.size(); ++i) rhs += spec[i] * gs[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("stft: error paths") {
  StftConfig cfg{128};
  CHECK_THROWS_AS(stft(Waveform(8000, 1, 0), cfg), DataError);
  CHECK_THROWS_AS(stft(Waveform(8000, 1, 100), cfg), DataError);
  auto spec = stft(Waveform(8000, 1, 1000), cfg);
  CHECK_THROWS_AS(istft(spec, StftConfig{256}), std::invalid_argument);
}
