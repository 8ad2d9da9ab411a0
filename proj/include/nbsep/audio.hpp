// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace nbsep {

/// Multichannel real signal, interleaved as samples x channels.
struct Waveform {
  double sample_rate = 16000.0;
  std::size_t channels = 1;
  std::vector<double> data;

  Waveform() = default;
  Waveform(double rate, std::size_t num_channels, std::size_t num_samples)
      : sample_rate(rate), channels(num_channels),
        data(num_samples * num_channels, 0.0) {}

  std::size_t samples() const { return channels ? data.size() / channels : 0; }
  double& at(std::size_t n, std::size_t c) { return data[n * channels + c]; }
  double at(std::size_t n, std::size_t c) const { return data[n * channels + c]; }

  std::vector<double> channel(std::size_t c) const {
    std::vector<double> out(samples());
    for (std::size_t n = 0; n < out.size(); ++n) out[n] = at(n, c);
    return out;
  }
  static Waveform mono(double rate, std::vector<double> samples) {
    Waveform w;
    w.sample_rate = rate;
    w.channels = 1;
    w.data = std::move(samples);
    return w;
  }
};

/// Raised for malformed or inconsistent signal data (exit code 2 in the CLI).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nbsep
