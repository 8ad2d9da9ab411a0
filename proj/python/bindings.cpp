// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Python module _nbsep. Waveforms cross the boundary as float64 arrays of
// shape (samples, channels); spectrograms as complex128 (freqs, frames, channels).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <complex>
#include <cstring>

#include "nbsep/checkpoint.hpp"
#include "nbsep/loss_metrics.hpp"
#include "nbsep/network.hpp"
#include "nbsep/simulator.hpp"
#include "nbsep/stft.hpp"
#include "nbsep/trainer.hpp"

namespace py = pybind11;
using namespace nbsep;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using C128 = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;

Waveform to_wave(const F64& a, double rate) {
  if (a.ndim() != 1 && a.ndim() != 2) throw py::value_error("expected (samples,) or (samples, channels)");
  Waveform w;
  w.sample_rate = rate;
  w.channels = a.ndim() == 2 ? std::size_t(a.shape(1)) : 1;
  w.data.assign(a.data(), a.data() + a.size());
  return w;
}

F64 from_wave(const Waveform& w) {
  F64 out({py::ssize_t(w.samples()), py::ssize_t(w.channels)});
  std::copy(w.data.begin(), w.data.end(), out.mutable_data());
  return out;
}

SpeakerSignals to_signals(const F64& a) {
  if (a.ndim() != 2) throw py::value_error("expected (speakers, samples)");
  SpeakerSignals s(1, a.shape(0), a.shape(1));
  s.data.assign(a.data(), a.data() + a.size());
  return s;
}

StftConfig stft_for(std::size_t window) {
  StftConfig c;
  c.window_length = window;
  return c;
}

}  // namespace

PYBIND11_MODULE(_nbsep, m) {
  m.doc() = "Narrow-band multichannel speech separation";

  m.def("si_sdr", [](const F64& target, const F64& estimate) {
    return si_sdr({target.data(), std::size_t(target.size())},
                  {estimate.data(), std::size_t(estimate.size())});
  }, py::arg("target"), py::arg("estimate"), "SI-SDR in dB of two 1-D signals.");

  m.def("fpit", [](const F64& estimates, const F64& targets) {
    const LossReport r = fpit(to_signals(estimates), to_signals(targets));
    return py::make_tuple(r.loss, r.permutation.at(0));
  }, py::arg("estimates"), py::arg("targets"),
     "Full-band PIT over (speakers, samples) arrays; returns (loss, permutation).");

  m.def("stft", [](const F64& wave, std::size_t window) {
    const ComplexSpectrogram s = stft(to_wave(wave, 0.0), stft_for(window));
    C128 out({py::ssize_t(s.freqs), py::ssize_t(s.frames), py::ssize_t(s.channels)});
    std::memcpy(out.mutable_data(), s.data.data(), s.data.size() * sizeof(double));
    return out;
  }, py::arg("wave"), py::arg("window_length") = 256);

  m.def("istft", [](const C128& spec, std::size_t window, std::size_t samples) {
    if (spec.ndim() != 3) throw py::value_error("expected (freqs, frames, channels)");
    const StftConfig cfg = stft_for(window);
    ComplexSpectrogram s(spec.shape(0), spec.shape(1), spec.shape(2));
    std::memcpy(s.data.data(), spec.data(), s.data.size() * sizeof(double));
    s.config = cfg;
    s.num_samples = samples;
    return from_wave(istft(s, cfg));
  }, py::arg("spec"), py::arg("window_length"), py::arg("samples"));

  m.def("count_parameters", [](const std::string& preset, std::size_t channels) {
    ModelConfig c = preset == "large" ? ModelConfig::large()
                    : preset == "tiny" ? ModelConfig::tiny()
                                       : ModelConfig::small();
    c.channels = channels;
    return count_parameters(c);
  }, py::arg("preset") = "small", py::arg("channels") = 8);

  m.def("simulate", [](std::size_t index, std::uint64_t seed, std::size_t channels,
                       double sample_rate, double length_s, const std::string& source) {
    DatasetConfig d;
    d.count = index + 1;
    d.seed = seed;
    d.channels = channels;
    d.sample_rate = sample_rate;
    d.length_s = length_s;
    d.source = source == "multitone" ? SourceKind::Multitone : SourceKind::AmNoise;
    const MixtureExample ex = make_example(d, index);
    F64 targets({py::ssize_t(ex.targets.size()), py::ssize_t(ex.mixture.samples())});
    for (std::size_t n = 0; n < ex.targets.size(); ++n) {
      std::copy(ex.targets[n].begin(), ex.targets[n].end(),
                targets.mutable_data() + n * ex.mixture.samples());
    }
    return py::make_tuple(from_wave(ex.mixture), targets);
  }, py::arg("index") = 0, py::arg("seed") = 1, py::arg("channels") = 4,
     py::arg("sample_rate") = 8000.0, py::arg("length_s") = 0.5, py::arg("source") = "am_noise",
     "Returns (mixture (samples, channels), targets (2, samples)).");

  m.def("separate", [](const std::string& checkpoint, const F64& mixture) {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    Model<float> model = restore_model<float>(ckpt);
    const SpeakerSignals s = separate(model, to_wave(mixture, checkpoint_sample_rate(ckpt)),
                                      checkpoint_stft(ckpt));
    F64 out({py::ssize_t(s.speakers), py::ssize_t(s.samples)});
    std::copy(s.data.begin(), s.data.end(), out.mutable_data());
    return out;
  }, py::arg("checkpoint"), py::arg("mixture"),
     "Separates a (samples, channels) mixture with a trained checkpoint.");
}
