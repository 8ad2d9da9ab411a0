// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace nbsep {

namespace {

constexpr double kDbScale = 10.0 / 2.302585092994045684;  // 10 / ln 10

double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
  return d;
}

void check_pair(std::span<const double> target, std::span<const double> estimate) {
  if (target.size() != estimate.size()) {
    throw DataError("si_sdr: target has " + std::to_string(target.size()) +
                    " samples, estimate " + std::to_string(estimate.size()));
  }
  if (energy(target) <= kSdrDelta) {
    throw SilentTargetError("si_sdr: target signal is silent");
  }
}

bool is_silent(std::span<const double> target) {
  return energy(target) <= kSdrDelta;
}

void check_signals(const SpeakerSignals& est, const SpeakerSignals& tgt) {
  if (est.utterances != tgt.utterances || est.speakers != tgt.speakers ||
      est.samples != tgt.samples) {
    throw DataError("fpit: estimates are " + std::to_string(est.utterances) +
                    "x" + std::to_string(est.speakers) + "x" +
                    std::to_string(est.samples) + ", targets " +
                    std::to_string(tgt.utterances) + "x" +
                    std::to_string(tgt.speakers) + "x" +
                    std::to_string(tgt.samples));
  }
}

// Permutation search for one utterance given the pairwise score table
// score[n][k] = SI-SDR of target n against output position k.
void search_utterance(const std::vector<std::vector<double>>& score,
                      const std::vector<bool>& silent, std::size_t u,
                      LossReport& report) {
  const std::size_t n_spk = score.size();
  std::size_t included = 0;
  for (bool s : silent) included += s ? 0 : 1;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> best_perm;
  for (const auto& perm : all_permutations(n_spk)) {
    double sum = 0.0;
    for (std::size_t n = 0; n < n_spk; ++n) {
      if (!silent[n]) sum += score[n][perm[n]];
    }
    const double loss = included ? -sum / double(included) : 0.0;
    if (loss < best) {
      best = loss;
      best_perm = perm;
    }
  }
  std::vector<double> per(n_spk, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t n = 0; n < n_spk; ++n) {
    if (silent[n]) {
      report.warnings.push_back("utterance " + std::to_string(u) + ": target " +
                                std::to_string(n) +
                                " is silent and left out of the loss");
      ++report.excluded;
    } else {
      per[n] = score[n][best_perm[n]];
    }
  }
  report.permutation.push_back(best_perm);
  report.si_sdr.push_back(std::move(per));
  report.utterance_loss.push_back(best);
}

void finish(LossReport& report, const std::vector<std::size_t>& counted) {
  double sum = 0.0;
  for (std::size_t u : counted) sum += report.utterance_loss[u];
  report.loss = counted.empty() ? 0.0 : sum / double(counted.size());
}

}  // namespace

double si_sdr(std::span<const double> target, std::span<const double> estimate) {
  check_pair(target, estimate);
  const double ey = energy(target);
  const double alpha = dot(estimate, target) / ey;
  double err = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double e = alpha * target[i] - estimate[i];
    err += e * e;
  }
  return 10.0 * std::log10((alpha * alpha * ey + kSdrDelta) / (err + kSdrDelta));
}

std::vector<double> si_sdr_gradient(std::span<const double> target,
                                    std::span<const double> estimate) {
  check_pair(target, estimate);
  const double ey = energy(target);
  const double alpha = dot(estimate, target) / ey;
  std::vector<double> e(target.size());
  double err = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    e[i] = alpha * target[i] - estimate[i];
    err += e[i] * e[i];
  }
  const double p = alpha * alpha * ey + kSdrDelta, d = err + kSdrDelta;
  // dP = 2 a y, dD = -2 e (e is orthogonal to y by construction of a).
  std::vector<double> g(target.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = kDbScale * (2.0 * alpha * target[i] / p + 2.0 * e[i] / d);
  }
  return g;
}

std::vector<std::vector<std::size_t>> all_permutations(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::vector<std::vector<std::size_t>> out;
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

LossReport fpit(const SpeakerSignals& estimates, const SpeakerSignals& targets) {
  check_signals(estimates, targets);
  LossReport report;
  std::vector<std::size_t> counted;
  const std::size_t N = targets.speakers;
  for (std::size_t u = 0; u < targets.utterances; ++u) {
    std::vector<bool> silent(N);
    std::vector<std::vector<double>> score(N, std::vector<double>(N, 0.0));
    for (std::size_t n = 0; n < N; ++n) {
      silent[n] = is_silent(targets.row(u, n));
      if (silent[n]) continue;
      for (std::size_t k = 0; k < N; ++k) {
        score[n][k] = si_sdr(targets.row(u, n), estimates.row(u, k));
      }
    }
    search_utterance(score, silent, u, report);
    if (std::count(silent.begin(), silent.end(), false) > 0) counted.push_back(u);
  }
  finish(report, counted);
  return report;
}

SpeakerSignals synthesize_speakers(const BoundPrediction& spectra,
                                   const StftConfig& config, std::size_t samples) {
  if (spectra.freqs != config.freqs()) {
    throw std::invalid_argument("fpit: spectra have " + std::to_string(spectra.freqs) +
                                " bins, config expects " +
                                std::to_string(config.freqs()));
  }
  SpeakerSignals out(spectra.utterances, spectra.speakers, samples);
  const std::size_t block = spectra.freqs * spectra.frames * 2;
  for (std::size_t u = 0; u < spectra.utterances; ++u) {
    for (std::size_t n = 0; n < spectra.speakers; ++n) {
      std::span<const double> spec(spectra.data.data() + spectra.index(u, n, 0, 0),
                                   block);
      const auto y = synthesize<double>(config, spec, spectra.frames, samples);
      std::copy(y.begin(), y.end(), out.row(u, n).begin());
    }
  }
  return out;
}

LossReport fpit_loss(const BoundPrediction& prediction,
                     const BoundPrediction& targets, const StftConfig& config) {
  if (prediction.utterances != targets.utterances ||
      prediction.speakers != targets.speakers ||
      prediction.freqs != targets.freqs || prediction.frames != targets.frames) {
    throw DataError("fpit: prediction and target spectra differ in shape");
  }
  const std::size_t samples =
      targets.num_samples ? targets.num_samples
                          : (targets.frames - 1) * config.hop();
  return fpit(synthesize_speakers(prediction, config, samples),
              synthesize_speakers(targets, config, samples));
}

template <typename T>
Tensor<T> fpit_loss(Tape<T>* tape, const Tensor<T>& bound,
                    const SpeakerSignals& targets, const StftConfig& config,
                    LossReport* report) {
  if (bound.rank() != 5 || bound.dim(4) != 2 || bound.dim(0) != targets.utterances ||
      bound.dim(1) != targets.speakers || bound.dim(2) != config.freqs()) {
    throw ShapeError("fpit: prediction " + shape_str(bound.shape()) +
                     " does not match " + std::to_string(targets.utterances) +
                     " utterances x " + std::to_string(targets.speakers) +
                     " speakers x " + std::to_string(config.freqs()) + " bins");
  }
  const std::size_t U = bound.dim(0), N = bound.dim(1), frames = bound.dim(3);
  const std::size_t block = config.freqs() * frames * 2;
  SpeakerSignals est(U, N, targets.samples);
  for (std::size_t u = 0; u < U; ++u) {
    for (std::size_t n = 0; n < N; ++n) {
      std::span<const T> spec(bound.data() + (u * N + n) * block, block);
      const auto y = synthesize<T>(config, spec, frames, targets.samples);
      std::copy(y.begin(), y.end(), est.row(u, n).begin());
    }
  }
  LossReport rep = fpit(est, targets);
  Tensor<T> out({1}, T(rep.loss), false);

  if (needs_grad(tape, bound)) {
    out.set_requires_grad(true);
    std::size_t counted = 0;
    for (std::size_t u = 0; u < U; ++u) {
      for (double s : rep.si_sdr[u]) {
        if (!std::isnan(s)) {
          ++counted;
          break;
        }
      }
    }
    tape->record([bound, out, est = std::move(est), targets, config, frames,
                  block, perm = rep.permutation, per = rep.si_sdr, counted]() {
      if (counted == 0) return;
      const double g_out = double(out.grad()[0]);
      auto gb = bound.grad();
      for (std::size_t u = 0; u < perm.size(); ++u) {
        std::size_t included = 0;
        for (double s : per[u]) included += std::isnan(s) ? 0 : 1;
        for (std::size_t n = 0; n < perm[u].size(); ++n) {
          if (std::isnan(per[u][n])) continue;
          const std::size_t k = perm[u][n];
          const double w = -g_out / double(counted) / double(included);
          const auto g = si_sdr_gradient(targets.row(u, n), est.row(u, k));
          std::vector<T> gt(g.size());
          for (std::size_t i = 0; i < g.size(); ++i) gt[i] = T(w * g[i]);
          const auto gs = synthesize_adjoint<T>(config, gt, frames);
          T* dst = gb.data() + (u * perm[u].size() + k) * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += gs[i];
        }
      }
    });
  }
  if (report) *report = std::move(rep);
  return out;
}

template Tensor<float> fpit_loss(Tape<float>*, const Tensor<float>&,
                                 const SpeakerSignals&, const StftConfig&,
                                 LossReport*);
template Tensor<double> fpit_loss(Tape<double>*, const Tensor<double>&,
                                  const SpeakerSignals&, const StftConfig&,
                                  LossReport*);

EvalTable evaluate(const SpeakerSignals& estimates, const SpeakerSignals& targets,
                   const SpeakerSignals& mixtures,
                   const std::vector<std::string>& ids) {
  check_signals(estimates, targets);
  if (mixtures.utterances != targets.utterances || mixtures.speakers != 1 ||
      mixtures.samples != targets.samples) {
    throw DataError("evaluate: expected one reference mixture of " +
                    std::to_string(targets.samples) + " samples per utterance");
  }
  if (!ids.empty() && ids.size() != targets.utterances) {
    throw std::invalid_argument("evaluate: " + std::to_string(ids.size()) +
                                " ids for " + std::to_string(targets.utterances) +
                                " utterances");
  }
  const LossReport rep = fpit(estimates, targets);
  EvalTable table;
  for (std::size_t u = 0; u < targets.utterances; ++u) {
    for (std::size_t n = 0; n < targets.speakers; ++n) {
      if (std::isnan(rep.si_sdr[u][n])) continue;
      EvalRow row;
      row.utterance = ids.empty() ? std::to_string(u) : ids[u];
      row.speaker = n;
      row.position = rep.permutation[u][n];
      row.si_sdr = rep.si_sdr[u][n];
      row.si_sdri = row.si_sdr - si_sdr(targets.row(u, n), mixtures.row(u, 0));
      table.rows.push_back(row);
    }
  }
  for (const auto& r : table.rows) {
    table.mean_si_sdr += r.si_sdr;
    table.mean_si_sdri += r.si_sdri;
  }
  if (!table.rows.empty()) {
    table.mean_si_sdr /= double(table.rows.size());
    table.mean_si_sdri /= double(table.rows.size());
  }
  return table;
}

std::string EvalTable::to_text() const {
  std::ostringstream os;
  os << "# SI-SDR ceiling: 10*log10(|y|^2/" << kSdrDelta
     << ") dB for a perfect estimate (100 dB at unit target energy)\n";
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "utterance\tspeaker\tsi_sdr_db\tsi_sdri_db\tposition\n";
  for (const auto& r : rows) {
    os << r.utterance << '\t' << r.speaker << '\t' << r.si_sdr << '\t' << r.si_sdri
       << '\t' << r.position << '\n';
  }
  os << "mean\t-\t" << mean_si_sdr << '\t' << mean_si_sdri << "\t-\n";
  return os.str();
}

}  // namespace nbsep
