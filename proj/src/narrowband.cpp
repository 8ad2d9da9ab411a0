// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/narrowband.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nbsep {

NarrowbandBatch extract_and_normalize(std::span<const ComplexSpectrogram> specs,
                                      std::size_t reference_channel) {
  if (specs.empty()) throw std::invalid_argument("narrowband: no spectrograms");
  const auto& first = specs.front();
  if (first.frames < 1) throw ShapeError("narrowband: spectrogram has no frames");
  if (reference_channel >= first.channels) {
    throw std::invalid_argument("narrowband: reference channel " +
                                std::to_string(reference_channel) +
                                " out of range for " +
                                std::to_string(first.channels) + " channels");
  }
  NarrowbandBatch b;
  b.utterances = specs.size();
  b.freqs = first.freqs;
  b.frames = first.frames;
  b.channels = first.channels;
  b.reference_channel = reference_channel;
  b.num_samples = first.num_samples;
  b.config = first.config;
  b.data.resize(b.utterances * b.freqs * b.frames * b.width());
  b.scales.resize(b.utterances * b.freqs);

  const std::size_t slice = b.frames * b.width();
  for (std::size_t u = 0; u < specs.size(); ++u) {
    const auto& s = specs[u];
    if (s.freqs != b.freqs || s.frames != b.frames || s.channels != b.channels) {
      throw ShapeError("narrowband: utterance " + std::to_string(u) +
                       " has shape " +
                       shape_str({s.freqs, s.frames, s.channels}) +
                       ", expected " + shape_str({b.freqs, b.frames, b.channels}));
    }
    for (std::size_t f = 0; f < b.freqs; ++f) {
      double mean = 0.0;
      for (std::size_t t = 0; t < b.frames; ++t) {
        mean += std::abs(s.at(f, t, reference_channel));
      }
      mean = std::max(mean / double(b.frames), kMagnitudeFloor);
      b.scales[u * b.freqs + f] = mean;
      // The spectrogram stores (f, t, c, re/im) contiguously per frequency,
      // which is already the packed per-frame layout.
      const double* src = s.data.data() + s.index(f, 0, 0);
      double* dst = b.data.data() + (u * b.freqs + f) * slice;
      for (std::size_t i = 0; i < slice; ++i) dst[i] = src[i] / mean;
    }
  }
  return b;
}

NarrowbandBatch extract_and_normalize(const ComplexSpectrogram& spec,
                                      std::size_t reference_channel) {
  return extract_and_normalize(std::span<const ComplexSpectrogram>(&spec, 1),
                               reference_channel);
}

template <typename T>
Tensor<T> bind_outputs(Tape<T>* tape, const Tensor<T>& net_out,
                       std::span<const double> scales) {
  if (net_out.rank() != 4 || net_out.dim(3) % 2 != 0 ||
      scales.size() != net_out.dim(0) * net_out.dim(1)) {
    throw ShapeError("bind: network output " + shape_str(net_out.shape()) +
                     " does not match " + std::to_string(scales.size()) +
                     " scales");
  }
  const std::size_t U = net_out.dim(0), F = net_out.dim(1), T_ = net_out.dim(2),
                    N = net_out.dim(3) / 2;
  Tensor<T> out({U, N, F, T_, 2});
  auto src_index = [=](std::size_t u, std::size_t f, std::size_t t,
                       std::size_t n) {
    return ((u * F + f) * T_ + t) * 2 * N + 2 * n;
  };
  auto dst_index = [=](std::size_t u, std::size_t n, std::size_t f,
                       std::size_t t) { return (((u * N + n) * F + f) * T_ + t) * 2; };
  for (std::size_t u = 0; u < U; ++u)
    for (std::size_t f = 0; f < F; ++f) {
      const T s = T(scales[u * F + f]);
      for (std::size_t t = 0; t < T_; ++t)
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t i = src_index(u, f, t, n), o = dst_index(u, n, f, t);
          out[o] = net_out[i] * s;
          out[o + 1] = net_out[i + 1] * s;
        }
    }
  if (needs_grad(tape, net_out)) {
    out.set_requires_grad(true);
    std::vector<double> sc(scales.begin(), scales.end());
    tape->record([=, sc = std::move(sc)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = net_out.grad();
      for (std::size_t u = 0; u < U; ++u)
        for (std::size_t f = 0; f < F; ++f) {
          const T s = T(sc[u * F + f]);
          for (std::size_t t = 0; t < T_; ++t)
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t i = src_index(u, f, t, n),
                                o = dst_index(u, n, f, t);
              gx[i] += g[o] * s;
              gx[i + 1] += g[o + 1] * s;
            }
        }
    });
  }
  return out;
}

BoundPrediction inverse_normalize_and_bind(const Tensor<double>& net_out,
                                           std::span<const double> scales,
                                           std::size_t num_samples) {
  const Tensor<double> bound = bind_outputs<double>(nullptr, net_out, scales);
  BoundPrediction p;
  p.utterances = bound.dim(0);
  p.speakers = bound.dim(1);
  p.freqs = bound.dim(2);
  p.frames = bound.dim(3);
  p.data.assign(bound.values().begin(), bound.values().end());
  p.num_samples = num_samples;
  return p;
}

template Tensor<float> bind_outputs(Tape<float>*, const Tensor<float>&,
                                    std::span<const double>);
template Tensor<double> bind_outputs(Tape<double>*, const Tensor<double>&,
                                     std::span<const double>);

}  // namespace nbsep
