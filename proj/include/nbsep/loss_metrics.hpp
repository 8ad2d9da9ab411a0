// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <span>
#include <string>
#include <vector>

#include "nbsep/audio.hpp"
#include "nbsep/narrowband.hpp"
#include "nbsep/stft.hpp"
#include "nbsep/tensor.hpp"

namespace nbsep {

/// Added to both energies of the SI-SDR ratio. A perfect estimate of a
/// unit-energy target therefore scores 100 dB, an orthogonal one -100 dB.
inline constexpr double kSdrDelta = 1e-10;

/// Raised when a target has (numerically) no energy.
class SilentTargetError : public DataError {
 public:
  using DataError::DataError;
};

/// 10 log10((|a y|^2 + d) / (|a y - est|^2 + d)) with a = est.y / |y|^2.
double si_sdr(std::span<const double> target, std::span<const double> estimate);

/// d si_sdr / d estimate.
std::vector<double> si_sdr_gradient(std::span<const double> target,
                                    std::span<const double> estimate);

/// U x N mono signals of equal length.
struct SpeakerSignals {
  std::size_t utterances = 0, speakers = 0, samples = 0;
  std::vector<double> data;

  SpeakerSignals() = default;
  SpeakerSignals(std::size_t u, std::size_t n, std::size_t s)
      : utterances(u), speakers(n), samples(s), data(u * n * s, 0.0) {}

  std::span<double> row(std::size_t u, std::size_t n) {
    return {data.data() + (u * speakers + n) * samples, samples};
  }
  std::span<const double> row(std::size_t u, std::size_t n) const {
    return {data.data() + (u * speakers + n) * samples, samples};
  }
};

/// All orderings of {0..n-1} in lexicographic order.
std::vector<std::vector<std::size_t>> all_permutations(std::size_t n);

/// Outcome of the permutation search. For utterance u, target speaker n is
/// matched with output position permutation[u][n].
struct LossReport {
  double loss = 0.0;  // mean over utterances of -mean_n SI-SDR
  std::vector<std::vector<std::size_t>> permutation;
  std::vector<std::vector<double>> si_sdr;  // [u][target]; NaN when excluded
  std::vector<double> utterance_loss;
  std::size_t excluded = 0;
  std::vector<std::string> warnings;
};

/// Full-band PIT on time-domain signals: one permutation per utterance,
/// chosen by exhaustive search. Silent targets are left out of the mean.
LossReport fpit(const SpeakerSignals& estimates, const SpeakerSignals& targets);

/// Converts every speaker spectrum to the time domain and applies fpit().
LossReport fpit_loss(const BoundPrediction& prediction,
                     const BoundPrediction& targets, const StftConfig& config);

/// Differentiable fPIT on bound network output (U x N x F x T x 2, see
/// bind_outputs). Returns the scalar loss; the report is filled if given.
template <typename T>
Tensor<T> fpit_loss(Tape<T>* tape, const Tensor<T>& bound,
                    const SpeakerSignals& targets, const StftConfig& config,
                    LossReport* report = nullptr);

/// Time-domain signals of bound spectra, cropped to `samples`.
SpeakerSignals synthesize_speakers(const BoundPrediction& spectra,
                                   const StftConfig& config, std::size_t samples);

struct EvalRow {
  std::string utterance;
  std::size_t speaker = 0;
  std::size_t position = 0;
  double si_sdr = 0.0;
  double si_sdri = 0.0;
};

struct EvalTable {
  std::vector<EvalRow> rows;
  double mean_si_sdr = 0.0;
  double mean_si_sdri = 0.0;

  /// Tab-separated table with a header line and a trailing mean row.
  std::string to_text() const;
};

/// SI-SDR of each target against its best-matching estimate and the
/// improvement over the unprocessed reference-channel mixture.
/// `mixtures` is U x 1 (the reference channel of each mixture).
EvalTable evaluate(const SpeakerSignals& estimates, const SpeakerSignals& targets,
                   const SpeakerSignals& mixtures,
                   const std::vector<std::string>& ids = {});

}  // namespace nbsep
