// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/gradient_suite.hpp"

#include <random>

#include "nbsep/loss_metrics.hpp"
#include "nbsep/narrowband.hpp"
#include "nbsep/network.hpp"
#include "nbsep/normalization.hpp"
#include "nbsep/ops.hpp"

namespace nbsep {

namespace {

Tensor<double> uniform(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = uni(rng);
  return t;
}

std::vector<Tensor<double>> parameter_tensors(const Model<double>& model) {
  std::vector<Tensor<double>> out;
  for (const auto& p : model.parameters()) out.push_back(p.tensor);
  return out;
}

// L=2, H1=8, H2=16, C=2, N=2.
ModelConfig micro_config() {
  ModelConfig mc;
  mc.num_blocks = 2;
  mc.hidden = 8;
  mc.ffn_hidden = 16;
  mc.conv_groups = 4;
  mc.channels = 2;
  mc.speakers = 2;
  return mc;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t first_seed, std::size_t seeds) {
  std::vector<GradSuiteEntry> out;
  for (std::uint64_t seed = first_seed; seed < first_seed + seeds; ++seed) {
    const std::uint64_t s = seed * 1000;
    auto add_check = [&](const std::string& name, const GradFn& fn,
                         std::vector<Tensor<double>> inputs, double h = 1e-5) {
      out.push_back({name, seed, check_gradients(fn, std::move(inputs), s + out.size(), h)});
    };

    auto x = uniform({2, 6, 8}, s + 1);
    auto w = uniform({5, 8}, s + 2);
    auto b = uniform({5}, s + 3);
    add_check("linear", [&](Tape<double>& t) { return linear<double>(&t, x, w, b); },
              {x, w, b});

    auto kw = uniform({8, 2, 3}, s + 4);
    auto kb = uniform({8}, s + 5);
    add_check("grouped_conv1d",
              [&](Tape<double>& t) { return grouped_conv1d<double>(&t, x, kw, kb, 4); },
              {x, kw, kb});
    add_check("silu", [&](Tape<double>& t) { return silu<double>(&t, x); }, {x});
    add_check("softmax", [&](Tape<double>& t) { return softmax_last<double>(&t, x); }, {x});
    add_check("dropout", [&](Tape<double>& t) { return dropout<double>(&t, x, 0.3, s); }, {x});

    auto q = uniform({2, 6, 8}, s + 6);
    auto k = uniform({2, 6, 8}, s + 7);
    auto v = uniform({2, 6, 8}, s + 8);
    add_check("attention",
              [&](Tape<double>& t) { return multi_head_attention<double>(&t, q, k, v, 2); },
              {q, k, v});

    for (NormKind kind : {NormKind::GBN, NormKind::BN, NormKind::LN, NormKind::GN}) {
      NormParams<double> p(kind, 8);
      p.groups = 2;
      p.gamma = uniform({8}, s + 9);
      p.beta = uniform({8}, s + 10);
      auto h = uniform({2, 3, 4, 8}, s + 11);
      add_check("norm_" + to_string(kind),
                [&](Tape<double>& t) { return apply_norm<double>(&t, h, p, Mode::Train); },
                {h, p.gamma, p.beta});
    }

    // One MHSA and one ConvFFN block on an 8-frame, 16-unit input.
    ModelConfig block_cfg = micro_config();
    block_cfg.num_blocks = 1;
    block_cfg.hidden = 16;
    block_cfg.ffn_hidden = 32;
    Model<double> block_model(block_cfg, s + 12);
    auto hb = uniform({1, 2, 8, 16}, s + 13);
    auto block_inputs = parameter_tensors(block_model);
    block_inputs.push_back(hb);
    auto xin = uniform({1, 2, 8, 4}, s + 14);
    add_check("input_conv", [&](Tape<double>& t) { return block_model.input_conv(&t, xin); },
              parameter_tensors(block_model));
    // Key biases get an exactly-zero gradient under softmax; the larger step
    // keeps the central-difference round-off on them below the floor.
    add_check("mhsa_block",
              [&](Tape<double>& t) { return block_model.mhsa_block(&t, 0, hb, Mode::Train, s); },
              block_inputs, 1e-4);
    add_check("convffn_block",
              [&](Tape<double>& t) {
                return block_model.convffn_block(&t, 0, hb, Mode::Train, s);
              },
              block_inputs);

    // Training loss end to end: F=4, T=8, one utterance.
    Model<double> model(micro_config(), s + 15);
    StftConfig stft;
    stft.window_length = 6;
    const std::size_t samples = 21;
    auto input = uniform({1, stft.freqs(), stft.frames(samples), 4}, s + 16);
    const std::vector<double> scales{0.7, 1.3, 0.4, 2.0};
    SpeakerSignals targets(1, 2, samples);
    {
      auto tv = uniform({targets.data.size()}, s + 17);
      std::copy(tv.values().begin(), tv.values().end(), targets.data.begin());
    }
    auto bound = uniform({1, 2, stft.freqs(), stft.frames(samples), 2}, s + 18);
    add_check("fpit_loss",
              [&](Tape<double>& t) { return fpit_loss<double>(&t, bound, targets, stft); },
              {bound});
    // The loss is ~14 dB, so a step of 1e-5 leaves round-off near 4e-10 on
    // the exactly-zero key-bias gradients; 1e-4 keeps it below the floor.
    add_check("end_to_end_fpit",
              [&](Tape<double>& t) {
                auto net = model.forward(&t, input, Mode::Eval).output;
                return fpit_loss<double>(&t, bind_outputs<double>(&t, net, scales), targets,
                                         stft);
              },
              parameter_tensors(model), 1e-4);
  }
  return out;
}

}  // namespace nbsep
