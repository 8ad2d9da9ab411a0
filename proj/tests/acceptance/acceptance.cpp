// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Acceptance checks. One PASS/FAIL line per criterion; the exit status is
// non-zero when any criterion fails.
//
//   nbsep_acceptance [--work DIR] [--only name,name,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nbsep/checkpoint.hpp"
#include "nbsep/config.hpp"
#include "nbsep/gradient_suite.hpp"
#include "nbsep/loss_metrics.hpp"
#include "nbsep/network.hpp"
#include "nbsep/normalization.hpp"
#include "nbsep/stft.hpp"
#include "nbsep/trainer.hpp"

namespace fs = std::filesystem;
using namespace nbsep;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

Tensor<double> uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor<double>(std::move(shape), uniform(n, rng, lo, hi));
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto results = run_gradient_suite(1, 5);
  const double wall = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  std::set<std::string> kinds;
  bool ok = true;
  for (const auto& r : results) {
    kinds.insert(r.name);
    ok = ok && r.result.passed(kGradSuiteTolerance);
    if (!r.result.finite || r.result.max_rel_error >= worst) {
      worst = r.result.finite ? r.result.max_rel_error : INFINITY;
      worst_name = r.name;
    }
  }
  return {ok && wall < 120.0,
          fmt("%zu checks over %zu layer kinds x 5 seeds, worst %.2e (%s) < 1e-4, %.1f s < 120 s",
              results.size(), kinds.size(), worst, worst_name.c_str(), wall)};
}

Outcome gbn_correctness() {
  const std::size_t U = 3, F = 17, T = 11, H = 24;
  std::mt19937_64 rng(41);
  auto h = uniform_tensor({U, F, T, H}, rng, -2.0, 5.0);
  NormParams<double> p(NormKind::GBN, H);
  const auto y = apply_norm<double>(nullptr, h, p, Mode::Train);
  double worst_mean = 0.0, worst_var = 0.0;
  for (std::size_t u = 0; u < U; ++u)
    for (std::size_t t = 0; t < T; ++t) {
      // Statistics of the (u, t) group in long double.
      long double si = 0, so = 0;
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t k = 0; k < H; ++k) {
          const std::size_t i = ((u * F + f) * T + t) * H + k;
          si += h[i];
          so += y[i];
        }
      const long double n = F * H, mi = si / n, mo = so / n;
      long double vi = 0, vo = 0;
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t k = 0; k < H; ++k) {
          const std::size_t i = ((u * F + f) * T + t) * H + k;
          vi += (h[i] - mi) * (h[i] - mi);
          vo += (y[i] - mo) * (y[i] - mo);
        }
      vi /= n;
      vo /= n;
      worst_mean = std::max(worst_mean, double(std::fabs(mo)));
      worst_var = std::max(worst_var, double(std::fabs(vo - vi / (vi + p.eps))));
    }

  const auto ye = apply_norm<double>(nullptr, h, p, Mode::Eval);
  bool identical = true;
  for (std::size_t i = 0; i < y.numel(); ++i) identical = identical && y[i] == ye[i];

  // Changing utterance 1 leaves utterance 0 and 2 bit-identical.
  Tensor<double> h2 = h.clone();
  for (std::size_t i = F * T * H; i < 2 * F * T * H; ++i) h2[i] = 10.0 * h2[i] + 3.0;
  const auto y2 = apply_norm<double>(nullptr, h2, p, Mode::Train);
  bool isolated = true;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    if (i / (F * T * H) != 1) isolated = isolated && y[i] == y2[i];
  }
  return {worst_mean < 1e-6 && worst_var < 1e-5 && identical && isolated,
          fmt("max |mean| %.1e < 1e-6, max |var - s2/(s2+eps)| %.1e < 1e-5, train/eval "
              "bit-identical: %s, per-utterance isolation: %s",
              worst_mean, worst_var, identical ? "yes" : "no", isolated ? "yes" : "no")};
}

Outcome fpit_oracle() {
  std::size_t agree = 0, total = 0;
  for (std::size_t N : {2u, 3u}) {
    // Orderings listed by hand, independent of the library's enumeration.
    const std::vector<std::vector<std::size_t>> orders =
        N == 2 ? std::vector<std::vector<std::size_t>>{{0, 1}, {1, 0}}
               : std::vector<std::vector<std::size_t>>{
                     {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (std::uint64_t inst = 0; inst < 100; ++inst) {
      std::mt19937_64 rng(9000 + 100 * N + inst);
      const std::size_t S = 64;
      SpeakerSignals t(1, N, S), e(1, N, S);
      t.data = uniform(N * S, rng);
      e.data = uniform(N * S, rng);
      // Leak a random target into every estimate so permutations matter.
      std::uniform_int_distribution<std::size_t> pick(0, N - 1);
      for (std::size_t k = 0; k < N; ++k) {
        const std::size_t src = pick(rng);
        for (std::size_t i = 0; i < S; ++i) e.row(0, k)[i] += 1.5 * t.row(0, src)[i];
      }
      const LossReport r = fpit(e, t);
      double best = INFINITY;
      std::vector<std::size_t> arg;
      for (const auto& p : orders) {
        double sum = 0.0;
        for (std::size_t s = 0; s < N; ++s) sum += si_sdr(t.row(0, s), e.row(0, p[s]));
        const double loss = -sum / double(N);
        if (loss < best) {
          best = loss;
          arg = p;
        }
      }
      ++total;
      agree += (r.loss == best && r.permutation[0] == arg) ? 1 : 0;
    }
  }
  return {agree == total, fmt("%zu/%zu instances (N=2 and N=3) match brute force exactly", agree,
                              total)};
}

Outcome si_sdr_properties() {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto y = uniform(500, rng);
    auto yh = uniform(500, rng);
    for (std::size_t i = 0; i < yh.size(); ++i) yh[i] += 0.8 * y[i];
    const double base = si_sdr(y, yh);
    for (double c : {0.1, 3.0, 10.0}) {
      std::vector<double> scaled(yh);
      for (double& v : scaled) v *= c;
      worst = std::max(worst, std::abs(si_sdr(y, scaled) - base));
    }
  }
  const std::vector<double> y{1.0, 0.0}, yh{1.0, 1.0};
  const double hand = si_sdr(y, yh);
  return {worst < 1e-6 && std::abs(hand) < 1e-9,
          fmt("scale c in {0.1,3,10}: max change %.1e dB < 1e-6; y=[1,0], yh=[1,1]: %.1e dB "
              "(|.| < 1e-9)",
              worst, hand)};
}

Outcome stft_round_trip() {
  std::string detail;
  bool ok = true;
  for (double rate : {8000.0, 16000.0}) {
    const StftConfig cfg = StftConfig::for_sample_rate(rate);
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      std::mt19937_64 rng(500 + s + std::uint64_t(rate));
      const std::size_t C = 1 + s % 8;
      const std::size_t n = std::size_t(rate * 0.25) + 97 * s;
      Waveform w(rate, C, n);
      w.data = uniform(C * n, rng);
      const Waveform back = istft(stft(w, cfg), cfg);
      if (back.data.size() != w.data.size()) {
        ok = false;
        continue;
      }
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < w.data.size(); ++i) {
        num += (back.data[i] - w.data[i]) * (back.data[i] - w.data[i]);
        den += w.data[i] * w.data[i];
      }
      worst = std::max(worst, std::sqrt(num / den));
    }
    ok = ok && worst < 1e-6;
    detail += fmt("%s%.0f Hz (window %zu): max relative error %.1e", detail.empty() ? "" : "; ",
                  rate, cfg.window_length, worst);
  }
  return {ok, detail + " over 20 signals each, < 1e-6"};
}

Outcome parameter_count() {
  bool ok = true;
  std::string detail;
  for (const char* name : {"small", "large"}) {
    const bool small = std::string(name) == "small";
    const double ref = small ? 0.9e6 : 5.6e6;
    detail += fmt("%s%s:", detail.empty() ? "" : "; ", name);
    for (std::size_t c : {2u, 4u, 8u}) {
      ModelConfig m = small ? ModelConfig::small() : ModelConfig::large();
      m.channels = c;
      const std::size_t n = count_parameters(m);
      const double dev = (double(n) - ref) / ref;
      ok = ok && std::abs(dev) <= 0.05;
      detail += fmt(" C=%zu %zu (%+.2f%%)", c, n, 100.0 * dev);
    }
  }
  return {ok, detail + " vs 0.9M / 5.6M within 5%"};
}

Outcome mhsa_equivariance() {
  ModelConfig mc = ModelConfig::tiny();
  Model<double> m(mc, 12);
  const std::size_t U = 2, F = 5, T = 23, H = mc.hidden;
  std::mt19937_64 rng(13);
  const auto x = uniform_tensor({U, F, T, H}, rng);
  std::vector<std::size_t> perm(T);
  std::iota(perm.begin(), perm.end(), std::size_t(0));
  std::shuffle(perm.begin(), perm.end(), rng);
  auto permute = [&](const Tensor<double>& t) {
    Tensor<double> p(t.shape());
    for (std::size_t s = 0; s < U * F; ++s)
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t k = 0; k < H; ++k) p[(s * T + i) * H + k] = t[(s * T + perm[i]) * H + k];
    return p;
  };
  double worst = 0.0;
  for (std::size_t block = 0; block < mc.num_blocks; ++block) {
    const auto y = m.mhsa_block(nullptr, block, x, Mode::Eval, 0);
    const auto yp = m.mhsa_block(nullptr, block, permute(x), Mode::Eval, 0);
    const auto expect = permute(y);
    for (std::size_t i = 0; i < yp.numel(); ++i) worst = std::max(worst, std::abs(yp[i] - expect[i]));
  }
  return {worst < 1e-5, fmt("random permutation of %zu frames, max deviation %.1e < 1e-5", T, worst)};
}

// ---------------------------------------------------------------------------
// Desk-scale training runs, shared between the criteria that need them.

class DeskRuns {
 public:
  DeskRuns(std::string work, ConfigMap config) : work_(std::move(work)), config_(std::move(config)) {}

  struct Run {
    FitResult fit;
    double wall_s = 0.0;
    double test_si_sdri = 0.0;  // held-out test set, best checkpoint
  };

  const ConfigMap& config() const { return config_; }

  DatasetConfig data(Split split, std::size_t count, SourceKind source) const {
    DatasetConfig d = dataset_config(config_);
    d.split = split;
    d.count = count;
    d.source = source;
    return d;
  }

  double test_score(const std::string& checkpoint, SourceKind source) const {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    Model<float> model = restore_model<float>(ckpt);
    const SimulatedSource test(data(Split::Test, kTestCount, source));
    return evaluate_model(model, test, stft_config(config_)).mean_si_sdri;
  }

  const Run& get(NormKind norm) {
    auto it = runs_.find(norm);
    if (it != runs_.end()) return it->second;
    ConfigMap cfg = config_;
    cfg["model.norm"] = to_string(norm);
    const SimulatedSource train(data(Split::Train, dataset_config(cfg).count, SourceKind::AmNoise));
    const SimulatedSource val(data(Split::Validation, kValCount, SourceKind::AmNoise));
    FitOptions fo;
    fo.out_dir = (fs::path(work_) / ("desk_" + to_string(norm))).string();
    std::printf("  ... training %s: %zu mixtures, %s epochs\n", to_string(norm).c_str(),
                train.size(), cfg.at("train.epochs").c_str());
    std::fflush(stdout);
    Run run;
    const auto t0 = Clock::now();
    run.fit = fit(train, &val, model_config(cfg), train_config(cfg), stft_config(cfg), fo);
    run.wall_s = seconds_since(t0);
    run.test_si_sdri = test_score(run.fit.best_checkpoint, SourceKind::AmNoise);
    std::printf("  ... %s: test SI-SDRi %.2f dB after %.0f s\n", to_string(norm).c_str(),
                run.test_si_sdri, run.wall_s);
    std::fflush(stdout);
    return runs_.emplace(norm, std::move(run)).first->second;
  }

  static constexpr std::size_t kValCount = 50;
  static constexpr std::size_t kTestCount = 50;

 private:
  std::string work_;
  ConfigMap config_;
  std::map<NormKind, Run> runs_;
};

Outcome desk_separation(DeskRuns& desk) {
  const auto& r = desk.get(NormKind::GBN);
  const ModelConfig mc = model_config(desk.config());
  const StftConfig sc = stft_config(desk.config());
  const double minutes = r.wall_s / 60.0;
  return {r.test_si_sdri >= 8.0 && minutes <= 45.0,
          fmt("tiny model (L=%zu, H1=%zu, H2=%zu), C=%zu, F=%zu, %s mixtures, %zu epochs: test "
              "SI-SDRi %.2f dB (>= 8), training %.1f min on this machine (<= 45)",
              mc.num_blocks, mc.hidden, mc.ffn_hidden, mc.channels, sc.freqs(),
              desk.config().at("data.count").c_str(), r.fit.epochs.size(), r.test_si_sdri,
              minutes)};
}

Outcome norm_ablation(DeskRuns& desk) {
  const double gbn = desk.get(NormKind::GBN).test_si_sdri;
  const double bn = desk.get(NormKind::BN).test_si_sdri;
  const double ln = desk.get(NormKind::LN).test_si_sdri;
  const double gn = desk.get(NormKind::GN).test_si_sdri;
  const bool ok = gbn - bn >= 1.0 && gbn >= ln - 0.5 && gbn >= gn - 0.5;
  return {ok, fmt("test SI-SDRi GBN %.2f, BN %.2f, LN %.2f, GN %.2f dB; need GBN-BN >= 1 "
                  "(%.2f), GBN >= LN-0.5 and GBN >= GN-0.5",
                  gbn, bn, ln, gn, gbn - bn)};
}

Outcome spectrum_agnostic(DeskRuns& desk) {
  const auto& r = desk.get(NormKind::GBN);
  const double matched = r.test_si_sdri;
  const double tones = desk.test_score(r.fit.best_checkpoint, SourceKind::Multitone);
  return {matched - tones <= 2.0,
          fmt("trained on AM noise: AM-noise test %.2f dB, multitone test %.2f dB, degradation "
              "%.2f dB (<= 2)",
              matched, tones, matched - tones)};
}

Outcome reproducibility(const std::string& work, const ConfigMap& desk_config) {
  ConfigMap cfg = desk_config;
  cfg["train.epochs"] = "2";
  cfg["train.threads"] = "1";
  DatasetConfig d = dataset_config(cfg);
  d.count = 40;
  const SimulatedSource train(d);
  DatasetConfig v = d;
  v.split = Split::Validation;
  v.count = 6;
  const SimulatedSource val(v);
  const ModelConfig mc = model_config(cfg);
  TrainConfig tc = train_config(cfg);
  const StftConfig sc = stft_config(cfg);

  auto run = [&](const std::string& name, const TrainConfig& t, const std::string& resume) {
    FitOptions fo;
    fo.out_dir = (fs::path(work) / name).string();
    fo.resume_from = resume;
    return fit(train, &val, mc, t, sc, fo);
  };
  auto bytes = [](const std::string& path) { return serialize_checkpoint(load_checkpoint(path)); };

  const FitResult a = run("repro_a", tc, "");
  const FitResult b = run("repro_b", tc, "");
  const bool twice = bytes(a.last_checkpoint) == bytes(b.last_checkpoint) &&
                     bytes(a.best_checkpoint) == bytes(b.best_checkpoint);
  TrainConfig first = tc;
  first.epochs = 1;
  const FitResult c1 = run("repro_c", first, "");
  const FitResult c2 = run("repro_c", tc, c1.last_checkpoint);
  const bool resumed = bytes(a.last_checkpoint) == bytes(c2.last_checkpoint);
  return {twice && resumed,
          fmt("2 epochs x %zu steps, single thread: repeated run bit-identical: %s; 1 epoch + "
              "resume equals uninterrupted run: %s",
              train.size() / tc.utterances_per_batch, twice ? "yes" : "no",
              resumed ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  std::string work = "acceptance_work";
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string s; std::getline(ss, s, ',');) only.insert(s);
    } else {
      std::fprintf(stderr, "usage: %s [--work DIR] [--only name,...]\n", argv[0]);
      return 1;
    }
  }
  fs::create_directories(work);

  ConfigMap desk_config = default_config();
  for (const auto& [k, v] : read_config_file(NBSEP_DESK_CONFIG)) desk_config[k] = v;
  DeskRuns desk(work, desk_config);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient_suite", gradient_suite},
      {"gbn_correctness", gbn_correctness},
      {"fpit_oracle", fpit_oracle},
      {"si_sdr_properties", si_sdr_properties},
      {"stft_round_trip", stft_round_trip},
      {"parameter_count", parameter_count},
      {"mhsa_equivariance", mhsa_equivariance},
      {"reproducibility", [&] { return reproducibility(work, desk_config); }},
      {"desk_separation", [&] { return desk_separation(desk); }},
      {"spectrum_agnostic", [&] { return spectrum_agnostic(desk); }},
      {"norm_ablation", [&] { return norm_ablation(desk); }},
  };

  int failed = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed ? 1 : 0;
}
