// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <doctest.h>

#include <cmath>
#include <random>

#include "nbsep/gradcheck.hpp"
#include "nbsep/loss_metrics.hpp"
#include "nbsep/network.hpp"
#include "test_util.hpp"

using namespace nbsep;
using nbsep::testing::random_tensor;
using nbsep::testing::random_vector;

namespace {

// SI-SDR through the projection form: s = <x,y>/|y|^2 y, e = x - s.
double oracle_si_sdr(const std::vector<double>& y, const std::vector<double>& x) {
  double yy = 0, xy = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    yy += y[i] * y[i];
    xy += x[i] * y[i];
  }
  double ss = 0, ee = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double s = xy / yy * y[i];
    ss += s * s;
    ee += (x[i] - s) * (x[i] - s);
  }
  return 10.0 * std::log10((ss + 1e-10) / (ee + 1e-10));
}

SpeakerSignals random_signals(std::size_t u, std::size_t n, std::size_t s,
                              std::uint64_t seed) {
  SpeakerSignals out(u, n, s);
  out.data = random_vector(u * n * s, seed);
  return out;
}

}  // namespace

TEST_CASE("si_sdr: hand-computed and limiting cases") {
  const std::vector<double> y{1.0, 0.0}, yh{1.0, 1.0};
  CHECK(std::abs(si_sdr(y, yh) - 0.0) < 1e-9);

  auto t = random_vector(200, 1);
  double e = 0;
  for (double v : t) e += v * v;
  for (double& v : t) v /= std::sqrt(e);
  std::vector<double> scaled(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) scaled[i] = -2.5 * t[i];
  CHECK(si_sdr(t, scaled) >= 100.0 - 1e-9);

  const std::vector<double> a{1.0, 0.0, 0.0}, b{0.0, 1.0, 0.0};
  CHECK(si_sdr(a, b) == doctest::Approx(-100.0).epsilon(1e-9));

  CHECK_THROWS_AS(si_sdr(std::vector<double>{0.0, 0.0}, yh), SilentTargetError);
  CHECK_THROWS_AS(si_sdr(y, std::vector<double>{1.0}), DataError);
}

TEST_CASE("si_sdr: scale invariance and agreement with the projection form") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto y = random_vector(300, seed), x = random_vector(300, seed + 100);
    for (std::size_t i = 0; i < y.size(); ++i) x[i] += 0.8 * y[i];
    const double base = si_sdr(y, x);
    CHECK(std::abs(base - oracle_si_sdr(y, x)) < 1e-9);
    for (double c : {0.1, 3.0, 10.0}) {
      std::vector<double> cx(x);
      for (double& v : cx) v *= c;
      CHECK(std::abs(si_sdr(y, cx) - base) < 1e-6);
    }
  }
}

TEST_CASE("si_sdr gradient matches central differences") {
  auto y = random_vector(40, 3), x = random_vector(40, 4);
  auto g = si_sdr_gradient(y, x);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto up = x, down = x;
    up[i] += h;
    down[i] -= h;
    const double num = (si_sdr(y, up) - si_sdr(y, down)) / (2 * h);
    CHECK(g[i] == doctest::Approx(num).epsilon(1e-6));
  }
}

TEST_CASE("all_permutations enumerates N! orderings") {
  CHECK(all_permutations(1).size() == 1);
  CHECK(all_permutations(2).size() == 2);
  CHECK(all_permutations(3).size() == 6);
  CHECK(all_permutations(4).size() == 24);
  CHECK(all_permutations(3)[0] == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("fpit: identity, swap and brute-force oracle") {
  auto tgt = random_signals(1, 2, 64, 5);
  auto rep = fpit(tgt, tgt);
  CHECK(rep.permutation[0] == std::vector<std::size_t>{0, 1});
  CHECK(rep.loss < -99.0);

  SpeakerSignals swapped(1, 2, 64);
  std::copy(tgt.row(0, 1).begin(), tgt.row(0, 1).end(), swapped.row(0, 0).begin());
  std::copy(tgt.row(0, 0).begin(), tgt.row(0, 0).end(), swapped.row(0, 1).begin());
  auto rs = fpit(swapped, tgt);
  CHECK(rs.permutation[0] == std::vector<std::size_t>{1, 0});
  CHECK(rs.loss == rep.loss);

  for (std::size_t n : {2u, 3u}) {
    // Hand-listed orderings instead of the library enumeration.
    const std::vector<std::vector<std::size_t>> orders =
        n == 2 ? std::vector<std::vector<std::size_t>>{{0, 1}, {1, 0}}
               : std::vector<std::vector<std::size_t>>{
                     {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (std::uint64_t inst = 0; inst < 100; ++inst) {
      auto t = random_signals(1, n, 32, 1000 + inst);
      auto e = random_signals(1, n, 32, 5000 + inst);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < 32; ++i) e.row(0, k)[i] += t.row(0, (k + inst) % n)[i];
      auto r = fpit(e, t);
      double best = 1e300;
      std::vector<std::size_t> arg;
      for (const auto& p : orders) {
        double sum = 0;
        for (std::size_t s = 0; s < n; ++s) sum += si_sdr(t.row(0, s), e.row(0, p[s]));
        const double loss = -sum / double(n);
        if (loss < best) {
          best = loss;
          arg = p;
        }
      }
      CHECK(r.loss == best);
      CHECK(r.permutation[0] == arg);
    }
  }
}

TEST_CASE("fpit: invariance to output order and positive rescaling") {
  for (std::size_t n : {2u, 3u}) {
    auto t = random_signals(2, n, 48, 20 + n);
    auto e = random_signals(2, n, 48, 30 + n);
    for (std::size_t u = 0; u < 2; ++u)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < 48; ++i) e.row(u, k)[i] += 1.5 * t.row(u, (k + 1) % n)[i];
    auto base = fpit(e, t);

    // pi moves output position k to position pi[k].
    std::vector<std::size_t> pi(n);
    for (std::size_t k = 0; k < n; ++k) pi[k] = (k + n - 1) % n;
    SpeakerSignals moved(2, n, 48);
    for (std::size_t u = 0; u < 2; ++u)
      for (std::size_t k = 0; k < n; ++k)
        std::copy(e.row(u, k).begin(), e.row(u, k).end(), moved.row(u, pi[k]).begin());
    auto r = fpit(moved, t);
    CHECK(r.loss == doctest::Approx(base.loss).epsilon(1e-12));
    for (std::size_t u = 0; u < 2; ++u)
      for (std::size_t s = 0; s < n; ++s)
        CHECK(r.permutation[u][s] == pi[base.permutation[u][s]]);

    SpeakerSignals scaled = e;
    for (double& v : scaled.data) v *= 7.0;
    CHECK(fpit(scaled, t).loss == doctest::Approx(base.loss).epsilon(1e-9));
  }
}

TEST_CASE("fpit: silent target is excluded with a warning") {
  auto t = random_signals(1, 2, 32, 40);
  auto e = random_signals(1, 2, 32, 41);
  for (double& v : t.row(0, 1)) v = 0.0;
  auto r = fpit(e, t);
  CHECK(r.excluded == 1);
  REQUIRE(r.warnings.size() == 1);
  CHECK(std::isnan(r.si_sdr[0][1]));
  const double best = std::max(si_sdr(t.row(0, 0), e.row(0, 0)), si_sdr(t.row(0, 0), e.row(0, 1)));
  CHECK(r.loss == doctest::Approx(-best));
  CHECK(std::isfinite(r.loss));
}

TEST_CASE("fpit_loss on spectra converts both sides through the inverse STFT") {
  StftConfig cfg;
  cfg.window_length = 16;
  const std::size_t samples = 100, frames = cfg.frames(samples);
  BoundPrediction tgt;
  tgt.utterances = 1;
  tgt.speakers = 2;
  tgt.freqs = cfg.freqs();
  tgt.frames = frames;
  tgt.num_samples = samples;
  for (std::size_t n = 0; n < 2; ++n) {
    auto w = stft(Waveform::mono(8000, random_vector(samples, 50 + n)), cfg);
    for (std::size_t f = 0; f < tgt.freqs; ++f)
      for (std::size_t t = 0; t < frames; ++t) {
        tgt.data.push_back(w.at(f, t, 0).real());
        tgt.data.push_back(w.at(f, t, 0).imag());
      }
  }
  auto same = fpit_loss(tgt, tgt, cfg);
  CHECK(same.permutation[0] == std::vector<std::size_t>{0, 1});
  CHECK(same.loss < -95.0);

  BoundPrediction sw = tgt;
  const std::size_t half = tgt.data.size() / 2;
  std::copy(tgt.data.begin(), tgt.data.begin() + half, sw.data.begin() + half);
  std::copy(tgt.data.begin() + half, tgt.data.end(), sw.data.begin());
  auto swapped = fpit_loss(sw, tgt, cfg);
  CHECK(swapped.permutation[0] == std::vector<std::size_t>{1, 0});
  CHECK(swapped.loss == doctest::Approx(same.loss).epsilon(1e-9));
}

TEST_CASE("differentiable fpit_loss: value and gradient") {
  StftConfig cfg;
  cfg.window_length = 8;
  const std::size_t samples = 30, frames = cfg.frames(samples);
  auto targets = random_signals(2, 2, samples, 60);
  auto bound = random_tensor({2, 2, cfg.freqs(), frames, 2}, 61);
  LossReport rep;
  auto loss = fpit_loss<double>(nullptr, bound, targets, cfg, &rep);
  BoundPrediction bp;
  bp.utterances = 2;
  bp.speakers = 2;
  bp.freqs = cfg.freqs();
  bp.frames = frames;
  bp.data.assign(bound.values().begin(), bound.values().end());
  auto ref = fpit(synthesize_speakers(bp, cfg, samples), targets);
  CHECK(loss[0] == doctest::Approx(ref.loss).epsilon(1e-12));
  CHECK(rep.permutation == ref.permutation);

  auto res = check_gradients(
      [&](Tape<double>& t) { return fpit_loss<double>(&t, bound, targets, cfg); },
      {bound}, 62);
  CHECK(res.passed(1e-4));
  CHECK_THROWS_AS(fpit_loss<double>(nullptr, random_tensor({2, 2, 3, frames, 2}, 1),
                                    targets, cfg),
                  ShapeError);
}

TEST_CASE("end-to-end training loss gradient on the micro config") {
  // L=2, H1=8, H2=16, F=4, T=8, C=2, N=2.
  ModelConfig mc;
  mc.num_blocks = 2;
  mc.hidden = 8;
  mc.ffn_hidden = 16;
  mc.channels = 2;
  mc.speakers = 2;
  Model<double> model(mc, 70);
  StftConfig cfg;
  cfg.window_length = 6;
  const std::size_t samples = 21;
  REQUIRE(cfg.freqs() == 4);
  REQUIRE(cfg.frames(samples) == 8);
  auto input = random_tensor({1, 4, 8, 4}, 71);
  const std::vector<double> scales{0.7, 1.3, 0.4, 2.0};
  auto targets = random_signals(1, 2, samples, 72);

  std::vector<Tensor<double>> inputs;
  for (auto& p : model.parameters()) inputs.push_back(p.tensor);
  auto res = check_gradients(
      [&](Tape<double>& t) {
        auto out = model.forward(&t, input, Mode::Eval).output;
        return fpit_loss<double>(&t, bind_outputs<double>(&t, out, scales), targets, cfg);
      },
      // The loss is ~14 dB, so a step of 1e-5 leaves round-off near 4e-10 on
      // the exactly-zero key-bias gradients; 1e-4 keeps it below the floor.
      inputs, 73, 1e-4);
  CHECK(res.finite);
  CHECK(res.checked == model.parameter_count());
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("evaluate: baselines and recomputation") {
  const std::size_t S = 400;
  auto t = random_signals(2, 2, S, 80);
  SpeakerSignals mix(2, 1, S);
  for (std::size_t u = 0; u < 2; ++u)
    for (std::size_t i = 0; i < S; ++i) mix.row(u, 0)[i] = t.row(u, 0)[i] + t.row(u, 1)[i];

  SpeakerSignals dup(2, 2, S);
  for (std::size_t u = 0; u < 2; ++u)
    for (std::size_t n = 0; n < 2; ++n)
      std::copy(mix.row(u, 0).begin(), mix.row(u, 0).end(), dup.row(u, n).begin());
  auto base = evaluate(dup, t, mix);
  for (const auto& r : base.rows) CHECK(std::abs(r.si_sdri) < 1e-12);

  auto exact = evaluate(t, t, mix, {"a", "b"});
  REQUIRE(exact.rows.size() == 4);
  for (const auto& r : exact.rows) {
    CHECK(r.position == r.speaker);
    const std::size_t u = r.utterance == "a" ? 0 : 1;
    const double ceiling = si_sdr(t.row(u, r.speaker), t.row(u, r.speaker));
    CHECK(r.si_sdri == doctest::Approx(ceiling - si_sdr(t.row(u, r.speaker), mix.row(u, 0))));
  }

  std::mt19937_64 rng(81);
  std::normal_distribution<double> gauss;
  SpeakerSignals noise(2, 2, S);
  for (double& v : noise.data) v = gauss(rng);
  SpeakerSignals tone(2, 2, S);
  for (std::size_t u = 0; u < 2; ++u)
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < S; ++i)
        tone.row(u, n)[i] = std::sin(0.05 * double((n + 1) * (u + 2)) * double(i));
  auto rnd = evaluate(noise, tone, mix);
  for (const auto& r : rnd.rows) {
    const std::size_t u = std::stoul(r.utterance);
    std::vector<double> y(tone.row(u, r.speaker).begin(), tone.row(u, r.speaker).end());
    std::vector<double> x(noise.row(u, r.position).begin(), noise.row(u, r.position).end());
    CHECK(r.si_sdr < -10.0);
    CHECK(r.si_sdr == doctest::Approx(oracle_si_sdr(y, x)).epsilon(1e-9));
  }
  const std::string text = exact.to_text();
  CHECK(text.find("utterance\tspeaker\tsi_sdr_db\tsi_sdri_db\tposition") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 7);
}
