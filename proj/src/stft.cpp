// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/stft.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

#include "eigen_maps.hpp"

namespace nbsep {

using detail::RowMat;

namespace {

constexpr double kWindowFloor = 1e-12;

// Real DFT of length n as dense matrices. Columns/rows are interleaved
// (re_k, im_k) for k = 0 .. n/2, matching the spectrogram storage.
template <typename T>
struct DftBasis {
  RowMat<T> analysis;   // n x 2F
  RowMat<T> synthesis;  // 2F x n
  std::vector<T> window;
};

template <typename T>
const DftBasis<T>& dft_basis(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<DftBasis<T>>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n];
  if (!slot) {
    auto b = std::make_unique<DftBasis<T>>();
    const std::size_t f = n / 2 + 1;
    b->analysis.resize(n, 2 * f);
    b->synthesis.resize(2 * f, n);
    for (std::size_t k = 0; k < f; ++k) {
      const double weight = (k == 0 || 2 * k == n) ? 1.0 : 2.0;
      for (std::size_t m = 0; m < n; ++m) {
        const double angle =
            2.0 * std::numbers::pi * double((k * m) % n) / double(n);
        const double c = std::cos(angle), s = std::sin(angle);
        b->analysis(m, 2 * k) = T(c);
        b->analysis(m, 2 * k + 1) = T(-s);
        b->synthesis(2 * k, m) = T(weight * c / double(n));
        b->synthesis(2 * k + 1, m) = T(-weight * s / double(n));
      }
    }
    const auto w = hann_window(n);
    b->window.assign(w.begin(), w.end());
    slot = std::move(b);
  }
  return *slot;
}

std::size_t padded_length(const StftConfig& cfg, std::size_t frames) {
  return (frames - 1) * cfg.hop() + cfg.window_length;
}

std::size_t lead_pad(const StftConfig& cfg) {
  return cfg.window_length - cfg.hop();
}

template <typename T>
std::vector<T> window_power(const StftConfig& cfg, std::size_t frames,
                            const std::vector<T>& w) {
  std::vector<T> den(padded_length(cfg, frames), T(0));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t m = 0; m < cfg.window_length; ++m) {
      den[t * cfg.hop() + m] += w[m] * w[m];
    }
  }
  for (T& v : den) v = std::max(v, T(kWindowFloor));
  return den;
}

void check_config(const StftConfig& cfg) {
  if (cfg.window_length < 4 || cfg.window_length % 2 != 0) {
    throw std::invalid_argument("stft: window length must be even and >= 4, got " +
                                std::to_string(cfg.window_length));
  }
}

}  // namespace

std::size_t StftConfig::frames(std::size_t samples) const {
  return 1 + (samples + hop() - 1) / hop();
}

StftConfig StftConfig::for_sample_rate(double rate) {
  StftConfig cfg;
  cfg.window_length = static_cast<std::size_t>(std::lround(rate * 0.032));
  if (cfg.window_length % 2) ++cfg.window_length;
  return cfg;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
  }
  return w;
}

ComplexSpectrogram stft(const Waveform& wave, const StftConfig& config) {
  check_config(config);
  const std::size_t len = wave.samples();
  if (wave.channels == 0 || len == 0) {
    throw DataError("stft: empty input signal");
  }
  if (len < config.window_length) {
    throw DataError("stft: signal of " + std::to_string(len) +
                    " samples is shorter than the window (" +
                    std::to_string(config.window_length) + ")");
  }
  const std::size_t n = config.window_length, hop = config.hop();
  const std::size_t chans = wave.channels;
  const std::size_t frames = config.frames(len);
  const std::size_t nf = config.freqs();
  const auto& basis = dft_basis<double>(n);
  const std::size_t pad = lead_pad(config);

  // Windowed frames, one row per (t, c).
  RowMat<double> fr(frames * chans, n);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t m = 0; m < n; ++m) {
      const std::size_t pos = t * hop + m;
      const bool inside = pos >= pad && pos - pad < len;
      for (std::size_t c = 0; c < chans; ++c) {
        fr(t * chans + c, m) =
            inside ? basis.window[m] * wave.at(pos - pad, c) : 0.0;
      }
    }
  }
  const RowMat<double> spec = fr * basis.analysis;

  ComplexSpectrogram out(nf, frames, chans);
  out.sample_rate = wave.sample_rate;
  out.config = config;
  out.num_samples = len;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t c = 0; c < chans; ++c) {
      for (std::size_t f = 0; f < nf; ++f) {
        const std::size_t i = out.index(f, t, c);
        out.data[i] = spec(t * chans + c, 2 * f);
        out.data[i + 1] = spec(t * chans + c, 2 * f + 1);
      }
    }
  }
  return out;
}

Waveform istft(const ComplexSpectrogram& spec, const StftConfig& config) {
  check_config(config);
  if (!(spec.config == config) || spec.freqs != config.freqs()) {
    throw std::invalid_argument(
        "istft: spectrogram made with window " +
        std::to_string(spec.config.window_length) + " (" +
        std::to_string(spec.freqs) + " bins), requested window " +
        std::to_string(config.window_length));
  }
  Waveform out(spec.sample_rate, spec.channels, spec.num_samples);
  std::vector<double> one(spec.freqs * spec.frames * 2);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    for (std::size_t f = 0; f < spec.freqs; ++f) {
      for (std::size_t t = 0; t < spec.frames; ++t) {
        const std::size_t i = spec.index(f, t, c);
        one[(f * spec.frames + t) * 2] = spec.data[i];
        one[(f * spec.frames + t) * 2 + 1] = spec.data[i + 1];
      }
    }
    const auto y = synthesize<double>(config, one, spec.frames, spec.num_samples);
    for (std::size_t s = 0; s < y.size(); ++s) out.at(s, c) = y[s];
  }
  return out;
}

template <typename T>
std::vector<T> synthesize(const StftConfig& config, std::span<const T> spec,
                          std::size_t frames, std::size_t length) {
  check_config(config);
  const std::size_t n = config.window_length, hop = config.hop();
  const std::size_t nf = config.freqs();
  if (spec.size() != nf * frames * 2) {
    throw std::invalid_argument("istft: expected " + std::to_string(nf) + "x" +
                                std::to_string(frames) + " bins, got " +
                                std::to_string(spec.size() / 2) + " values");
  }
  const std::size_t pad = lead_pad(config);
  if (padded_length(config, frames) < pad + length) {
    throw std::invalid_argument("istft: " + std::to_string(frames) +
                                " frames cannot cover " +
                                std::to_string(length) + " samples");
  }
  const auto& basis = dft_basis<T>(n);
  RowMat<T> s(frames, 2 * nf);
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t t = 0; t < frames; ++t) {
      s(t, 2 * f) = spec[(f * frames + t) * 2];
      s(t, 2 * f + 1) = spec[(f * frames + t) * 2 + 1];
    }
  }
  const RowMat<T> fr = s * basis.synthesis;
  std::vector<T> acc(padded_length(config, frames), T(0));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t m = 0; m < n; ++m) {
      acc[t * hop + m] += basis.window[m] * fr(t, m);
    }
  }
  const auto den = window_power<T>(config, frames, basis.window);
  std::vector<T> out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = acc[pad + i] / den[pad + i];
  return out;
}

template <typename T>
std::vector<T> synthesize_adjoint(const StftConfig& config,
                                  std::span<const T> wave_grad,
                                  std::size_t frames) {
  check_config(config);
  const std::size_t n = config.window_length, hop = config.hop();
  const std::size_t nf = config.freqs();
  const std::size_t pad = lead_pad(config);
  const auto& basis = dft_basis<T>(n);
  const auto den = window_power<T>(config, frames, basis.window);
  std::vector<T> g(padded_length(config, frames), T(0));
  for (std::size_t i = 0; i < wave_grad.size(); ++i) {
    g[pad + i] = wave_grad[i] / den[pad + i];
  }
  RowMat<T> gf(frames, n);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t m = 0; m < n; ++m) {
      gf(t, m) = basis.window[m] * g[t * hop + m];
    }
  }
  const RowMat<T> gs = gf * basis.synthesis.transpose();
  std::vector<T> out(nf * frames * 2);
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t t = 0; t < frames; ++t) {
      out[(f * frames + t) * 2] = gs(t, 2 * f);
      out[(f * frames + t) * 2 + 1] = gs(t, 2 * f + 1);
    }
  }
  return out;
}

template std::vector<float> synthesize(const StftConfig&, std::span<const float>,
                                       std::size_t, std::size_t);
template std::vector<double> synthesize(const StftConfig&,
                                        std::span<const double>, std::size_t,
                                        std::size_t);
template std::vector<float> synthesize_adjoint(const StftConfig&,
                                               std::span<const float>,
                                               std::size_t);
template std::vector<double> synthesize_adjoint(const StftConfig&,
                                                std::span<const double>,
                                                std::size_t);

}  // namespace nbsep
