// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <span>
#include <vector>

#include "nbsep/stft.hpp"
#include "nbsep/tensor.hpp"

namespace nbsep {

/// Floor applied to the per-frequency mean magnitude of the reference channel.
inline constexpr double kMagnitudeFloor = 1e-10;

/// Per-frequency network sequences: U x F x T x 2C reals packed as
/// [Re(ch0), Im(ch0), Re(ch1), Im(ch1), ...], plus the U x F magnitude scales
/// used for normalisation.
struct NarrowbandBatch {
  std::size_t utterances = 0, freqs = 0, frames = 0, channels = 0;
  std::vector<double> data;
  std::vector<double> scales;
  std::size_t reference_channel = 0;
  std::size_t num_samples = 0;
  StftConfig config;

  std::size_t width() const { return 2 * channels; }
  template <typename T>
  Tensor<T> to_tensor() const {
    return Tensor<T>({utterances, freqs, frames, width()},
                     std::vector<T>(data.begin(), data.end()));
  }
};

/// Full-band speaker spectra assembled by output position: U x N x F x T
/// complex, interleaved (re, im).
struct BoundPrediction {
  std::size_t utterances = 0, speakers = 0, freqs = 0, frames = 0;
  std::vector<double> data;
  std::size_t num_samples = 0;

  std::size_t index(std::size_t u, std::size_t n, std::size_t f,
                    std::size_t t) const {
    return (((u * speakers + n) * freqs + f) * frames + t) * 2;
  }
  std::complex<double> at(std::size_t u, std::size_t n, std::size_t f,
                          std::size_t t) const {
    const std::size_t i = index(u, n, f, t);
    return {data[i], data[i + 1]};
  }
};

/// Divides every frequency by the mean reference-channel magnitude over time.
NarrowbandBatch extract_and_normalize(std::span<const ComplexSpectrogram> specs,
                                      std::size_t reference_channel = 0);
NarrowbandBatch extract_and_normalize(const ComplexSpectrogram& spec,
                                      std::size_t reference_channel = 0);

/// Differentiable binding: net_out U x F x T x 2N -> U x N x F x T x 2 with
/// every (u, f) slice multiplied by its scale. Position n of every frequency
/// lands in speaker slot n.
template <typename T>
Tensor<T> bind_outputs(Tape<T>* tape, const Tensor<T>& net_out,
                       std::span<const double> scales);

BoundPrediction inverse_normalize_and_bind(const Tensor<double>& net_out,
                                           std::span<const double> scales,
                                           std::size_t num_samples = 0);

}  // namespace nbsep
