// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "nbsep/audio.hpp"

namespace nbsep {

/// Hann analysis/synthesis with 50% overlap.
struct StftConfig {
  std::size_t window_length = 512;

  std::size_t hop() const { return window_length / 2; }
  std::size_t freqs() const { return window_length / 2 + 1; }
  /// Frames produced for a signal of `samples` samples (centered framing).
  std::size_t frames(std::size_t samples) const;
  /// 32 ms window: 512 samples at 16 kHz, 256 at 8 kHz.
  static StftConfig for_sample_rate(double rate);

  bool operator==(const StftConfig&) const = default;
};

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// One-sided STFT of a multichannel signal, F x T x C complex values stored
/// as interleaved (re, im) pairs.
struct ComplexSpectrogram {
  std::size_t freqs = 0, frames = 0, channels = 0;
  std::vector<double> data;
  double sample_rate = 0.0;
  StftConfig config;
  std::size_t num_samples = 0;  // length of the analysed signal

  ComplexSpectrogram() = default;
  ComplexSpectrogram(std::size_t f, std::size_t t, std::size_t c)
      : freqs(f), frames(t), channels(c), data(f * t * c * 2, 0.0) {}

  std::size_t index(std::size_t f, std::size_t t, std::size_t c) const {
    return ((f * frames + t) * channels + c) * 2;
  }
  std::complex<double> at(std::size_t f, std::size_t t, std::size_t c) const {
    const std::size_t i = index(f, t, c);
    return {data[i], data[i + 1]};
  }
  void set(std::size_t f, std::size_t t, std::size_t c, std::complex<double> v) {
    const std::size_t i = index(f, t, c);
    data[i] = v.real();
    data[i + 1] = v.imag();
  }
};

/// The signal is zero-padded by window_length - hop on both ends, and at the
/// end up to a whole number of hops. Rejects empty or too-short input.
ComplexSpectrogram stft(const Waveform& wave, const StftConfig& config);

/// Overlap-add synthesis normalised by the summed squared window, cropped to
/// spec.num_samples. Rejects a spectrogram made with a different config.
Waveform istft(const ComplexSpectrogram& spec, const StftConfig& config);

// Single-channel kernels on an F x T x 2 layout, shared with the loss.

/// Inverse STFT of one channel; returns `length` samples.
template <typename T>
std::vector<T> synthesize(const StftConfig& config, std::span<const T> spec,
                          std::size_t frames, std::size_t length);

/// Adjoint of synthesize(): maps a gradient w.r.t. the waveform to a gradient
/// w.r.t. the F x T x 2 spectrum.
template <typename T>
std::vector<T> synthesize_adjoint(const StftConfig& config,
                                  std::span<const T> wave_grad,
                                  std::size_t frames);

}  // namespace nbsep
