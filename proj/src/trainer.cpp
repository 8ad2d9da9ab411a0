// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "format.hpp"
#include "seed_mix.hpp"

namespace nbsep {

using detail::mix_seed;
namespace fs = std::filesystem;

namespace {

std::string num(double v) { return detail::format_double(v); }

// Seed streams of a training run.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kDropoutStream = 2;
constexpr std::uint64_t kShuffleStream = 3;

}  // namespace

std::string to_string(Precision p) { return p == Precision::Float32 ? "float32" : "float64"; }

Precision parse_precision(const std::string& name) {
  if (name == "float32" || name == "float") return Precision::Float32;
  if (name == "float64" || name == "double") return Precision::Float64;
  throw std::invalid_argument("unknown precision '" + name + "' (float32, float64)");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  return lr0 * std::pow(decay, double(epoch));
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& why) { throw std::invalid_argument("train: " + why); };
  if (!(lr0 >= 0.0)) bad("lr0 must be non-negative");
  if (!(decay > 0.0)) bad("decay must be positive");
  if (!(clip_norm > 0.0)) bad("clip_norm must be positive");
  if (utterances_per_batch == 0) bad("utterances_per_batch must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) bad("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) bad("adam_eps must be positive");
  if (threads == 0) bad("threads must be at least 1");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"train.lr0", num(lr0)},
      {"train.decay", num(decay)},
      {"train.clip_norm", num(clip_norm)},
      {"train.utterances_per_batch", std::to_string(utterances_per_batch)},
      {"train.epochs", std::to_string(epochs)},
      {"train.seed", std::to_string(seed)},
      {"train.precision", to_string(precision)},
      {"train.beta1", num(beta1)},
      {"train.beta2", num(beta2)},
      {"train.adam_eps", num(adam_eps)},
      {"train.threads", std::to_string(threads)},
  };
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto size = [&](const char* key, std::size_t& dst) {
    if (auto* v = get(key)) dst = std::stoul(*v);
  };
  auto real = [&](const char* key, double& dst) {
    if (auto* v = get(key)) dst = std::stod(*v);
  };
  real("train.lr0", c.lr0);
  real("train.decay", c.decay);
  real("train.clip_norm", c.clip_norm);
  size("train.utterances_per_batch", c.utterances_per_batch);
  size("train.epochs", c.epochs);
  if (auto* v = get("train.seed")) c.seed = std::stoull(*v);
  if (auto* v = get("train.precision")) c.precision = parse_precision(*v);
  real("train.beta1", c.beta1);
  real("train.beta2", c.beta2);
  real("train.adam_eps", c.adam_eps);
  size("train.threads", c.threads);
  return c;
}

template <typename T>
OptimizerState<T> OptimizerState<T>::init(const Model<T>& model, const TrainConfig& config) {
  OptimizerState s;
  for (const auto& p : model.parameters()) {
    s.m.emplace_back(p.tensor.numel(), T(0));
    s.v.emplace_back(p.tensor.numel(), T(0));
  }
  s.beta1 = config.beta1;
  s.beta2 = config.beta2;
  s.eps = config.adam_eps;
  return s;
}

Batch make_batch(const std::vector<Utterance>& utterances, const StftConfig& config,
                 std::size_t reference_channel) {
  if (utterances.empty()) throw std::invalid_argument("make_batch: no utterances");
  const std::size_t samples = utterances[0].mixture.samples();
  const std::size_t speakers = utterances[0].targets.size();
  Batch b;
  std::vector<ComplexSpectrogram> specs;
  b.targets = SpeakerSignals(utterances.size(), speakers, samples);
  for (std::size_t u = 0; u < utterances.size(); ++u) {
    const Utterance& utt = utterances[u];
    if (utt.mixture.samples() != samples || utt.targets.size() != speakers) {
      throw DataError("batch: utterance " + utt.id + " has " +
                      std::to_string(utt.mixture.samples()) + " samples and " +
                      std::to_string(utt.targets.size()) + " targets, expected " +
                      std::to_string(samples) + " and " + std::to_string(speakers));
    }
    specs.push_back(stft(utt.mixture, config));
    for (std::size_t n = 0; n < speakers; ++n) {
      if (utt.targets[n].size() != samples) {
        throw DataError("batch: target " + std::to_string(n) + " of " + utt.id +
                        " has the wrong length");
      }
      std::copy(utt.targets[n].begin(), utt.targets[n].end(), b.targets.row(u, n).begin());
    }
    b.ids.push_back(utt.id);
  }
  b.input = extract_and_normalize(specs, reference_channel);
  return b;
}

template <typename T>
void enable_gradients(Model<T>& model) {
  for (auto& p : model.parameters()) p.tensor.set_requires_grad(true);
}

template <typename T>
LossReport compute_gradients(Model<T>& model, const Batch& batch, std::uint64_t dropout_seed) {
  for (auto& p : model.parameters()) p.tensor.zero_grad();
  Tape<T> tape;
  const Tensor<T> x = batch.input.to_tensor<T>();
  auto out = model.forward(&tape, x, Mode::Train, dropout_seed);
  auto bound = bind_outputs(&tape, out.output, batch.input.scales);
  LossReport report;
  Tensor<T> loss = fpit_loss(&tape, bound, batch.targets, batch.input.config, &report);
  if (std::isfinite(double(loss[0]))) {
    tape.backward(loss);
  } else {
    tape.clear();
  }
  return report;
}

template <typename T>
double global_grad_norm(const Model<T>& model) {
  double sq = 0.0;
  for (const auto& p : model.parameters()) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) sq += double(g) * double(g);
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_gradients(Model<T>& model, double max_norm) {
  const double norm = global_grad_norm(model);
  if (norm > max_norm && std::isfinite(norm)) {
    const double scale = max_norm / norm;
    for (auto& p : model.parameters()) {
      if (!p.tensor.has_grad()) continue;
      for (T& g : p.tensor.grad()) g = T(double(g) * scale);
    }
  }
  return norm;
}

template <typename T>
void adam_update(Model<T>& model, OptimizerState<T>& s, double lr) {
  auto params = model.parameters();
  if (s.m.size() != params.size()) throw std::logic_error("adam: state does not match model");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, double(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, double(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].tensor.values();
    auto g = params[i].tensor.grad();
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = s.beta1 * double(m[j]) + (1.0 - s.beta1) * gj;
      const double vj = s.beta2 * double(v[j]) + (1.0 - s.beta2) * gj * gj;
      m[j] = T(mj);
      v[j] = T(vj);
      w[j] = T(double(w[j]) - lr * (mj / c1) / (std::sqrt(vj / c2) + s.eps));
    }
  }
}

template <typename T>
StepReport train_step(Model<T>& model, OptimizerState<T>& state, const Batch& batch,
                      double lr, const TrainConfig& config, std::uint64_t dropout_seed) {
  StepReport r;
  r.lr = lr;
  r.loss = compute_gradients(model, batch, dropout_seed);
  r.grad_norm = clip_gradients(model, config.clip_norm);
  if (!std::isfinite(r.loss.loss) || !std::isfinite(r.grad_norm)) {
    r.skipped = true;
  } else {
    adam_update(model, state, lr);
  }
  for (auto& p : model.parameters()) p.tensor.drop_grad();
  return r;
}

template <typename T>
SpeakerSignals separate(Model<T>& model, const Waveform& mixture, const StftConfig& config,
                        std::size_t reference_channel, AttentionRecord* attention) {
  if (mixture.channels != model.config().channels) {
    throw DataError("separate: mixture has " + std::to_string(mixture.channels) +
                    " channels, model expects " + std::to_string(model.config().channels));
  }
  const NarrowbandBatch nb = extract_and_normalize(stft(mixture, config), reference_channel);
  auto out = model.forward(nullptr, nb.to_tensor<T>(), Mode::Eval, 0, attention != nullptr);
  if (attention) *attention = std::move(out.attention);
  const BoundPrediction bound =
      inverse_normalize_and_bind(tensor_cast<double>(out.output), nb.scales, nb.num_samples);
  return synthesize_speakers(bound, config, mixture.samples());
}

template <typename T>
EvalTable evaluate_model(Model<T>& model, const ExampleSource& source,
                         const StftConfig& config, std::size_t reference_channel) {
  const std::size_t count = source.size();
  if (count == 0) throw DataError("evaluate: empty dataset");
  SpeakerSignals est, tgt, mix;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < count; ++i) {
    const Utterance u = source.get(i);
    const SpeakerSignals e = separate(model, u.mixture, config, reference_channel);
    if (i == 0) {
      est = SpeakerSignals(count, e.speakers, e.samples);
      tgt = SpeakerSignals(count, u.targets.size(), e.samples);
      mix = SpeakerSignals(count, 1, e.samples);
    }
    if (e.samples != est.samples || u.targets.size() != tgt.speakers) {
      throw DataError("evaluate: utterance " + u.id + " differs in length or speakers");
    }
    for (std::size_t n = 0; n < e.speakers; ++n) {
      std::copy(e.row(0, n).begin(), e.row(0, n).end(), est.row(i, n).begin());
    }
    for (std::size_t n = 0; n < tgt.speakers; ++n) {
      if (u.targets[n].size() != tgt.samples) {
        throw DataError("evaluate: target of " + u.id + " has the wrong length");
      }
      std::copy(u.targets[n].begin(), u.targets[n].end(), tgt.row(i, n).begin());
    }
    const auto ref = u.mixture.channel(reference_channel);
    std::copy(ref.begin(), ref.end(), mix.row(i, 0).begin());
    ids.push_back(u.id);
  }
  return evaluate(est, tgt, mix, ids);
}

template <typename T>
void store_optimizer(Checkpoint& ckpt, const Model<T>& model, const OptimizerState<T>& s) {
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& shape = params[i].tensor.shape();
    ckpt.put({"adam.m." + params[i].name, dtype_of<T>(), shape,
              std::vector<double>(s.m[i].begin(), s.m[i].end())});
    ckpt.put({"adam.v." + params[i].name, dtype_of<T>(), shape,
              std::vector<double>(s.v[i].begin(), s.v[i].end())});
  }
  ckpt.metadata["state.adam_step"] = std::to_string(s.step);
}

template <typename T>
OptimizerState<T> restore_optimizer(const Checkpoint& ckpt, const Model<T>& model,
                                    const TrainConfig& config) {
  OptimizerState<T> s = OptimizerState<T>::init(model, config);
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& m = ckpt.require("adam.m." + params[i].name);
    const auto& v = ckpt.require("adam.v." + params[i].name);
    if (m.values.size() != s.m[i].size() || v.values.size() != s.v[i].size()) {
      throw DataError("checkpoint: optimizer moments of " + params[i].name +
                      " do not match the parameter");
    }
    std::transform(m.values.begin(), m.values.end(), s.m[i].begin(),
                   [](double x) { return T(x); });
    std::transform(v.values.begin(), v.values.end(), s.v[i].begin(),
                   [](double x) { return T(x); });
  }
  s.step = std::stoull(ckpt.meta("state.adam_step"));
  return s;
}

StftConfig checkpoint_stft(const Checkpoint& ckpt) {
  StftConfig c;
  c.window_length = std::stoul(ckpt.meta("stft.window_length"));
  return c;
}

double checkpoint_sample_rate(const Checkpoint& ckpt) {
  return std::stod(ckpt.meta("data.sample_rate"));
}

namespace {

struct RunState {
  std::size_t epoch = 0;   // epochs completed
  std::uint64_t step = 0;  // batches processed
  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
};

template <typename T>
Checkpoint snapshot(const Model<T>& model, const OptimizerState<T>& opt,
                    const TrainConfig& config, const StftConfig& stft_config,
                    double sample_rate, const RunState& st) {
  Checkpoint ckpt;
  store_model(ckpt, model);
  store_optimizer(ckpt, model, opt);
  for (const auto& [k, v] : config.to_map()) ckpt.metadata[k] = v;
  ckpt.metadata["stft.window_length"] = std::to_string(stft_config.window_length);
  ckpt.metadata["data.sample_rate"] = num(sample_rate);
  ckpt.metadata["state.epoch"] = std::to_string(st.epoch);
  ckpt.metadata["state.step"] = std::to_string(st.step);
  ckpt.metadata["state.best_si_sdri"] = num(st.best);
  ckpt.metadata["state.best_epoch"] = std::to_string(st.best_epoch);
  return ckpt;
}

template <typename T>
FitResult fit_impl(const ExampleSource& train, const ExampleSource* validation,
                   const ModelConfig& model_config, const TrainConfig& config,
                   const StftConfig& stft_config, const FitOptions& options) {
  config.validate();
  const std::size_t per = config.utterances_per_batch;
  if (train.size() == 0) throw DataError("fit: the training set is empty");
  if (train.size() < per) {
    throw DataError("fit: " + std::to_string(train.size()) +
                    " training utterances cannot fill a batch of " + std::to_string(per));
  }
  if (validation && validation->size() == 0) throw DataError("fit: the validation set is empty");
  if (options.out_dir.empty()) throw std::invalid_argument("fit: no output directory");
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec) throw DataError("fit: cannot create " + options.out_dir + ": " + ec.message());

  FitResult result;
  const fs::path dir(options.out_dir);
  result.log_path = (dir / "train_log.tsv").string();
  result.val_log_path = (dir / "val_log.tsv").string();
  result.last_checkpoint = (dir / "last.ckpt").string();
  result.best_checkpoint = (dir / "best.ckpt").string();

  const double sample_rate = train.get(0).mixture.sample_rate;
  Model<T> model(model_config, mix_seed(config.seed, kInitStream));
  OptimizerState<T> opt = OptimizerState<T>::init(model, config);
  RunState st;
  if (!options.resume_from.empty()) {
    const Checkpoint ckpt = load_checkpoint(options.resume_from);
    model = restore_model<T>(ckpt);
    if (!(model.config() == model_config)) {
      throw DataError("fit: " + options.resume_from +
                      " holds a different model configuration");
    }
    opt = restore_optimizer(ckpt, model, config);
    st.epoch = std::stoul(ckpt.meta("state.epoch"));
    st.step = std::stoull(ckpt.meta("state.step"));
    st.best = std::stod(ckpt.meta("state.best_si_sdri"));
    st.best_epoch = std::stoul(ckpt.meta("state.best_epoch"));
  }
  enable_gradients(model);

  const bool fresh = options.resume_from.empty();
  const auto mode = fresh ? std::ios::trunc : std::ios::app;
  std::ofstream log(result.log_path, std::ios::out | mode);
  std::ofstream val_log(result.val_log_path, std::ios::out | mode);
  if (!log) throw DataError("fit: cannot write " + result.log_path);
  if (!val_log) throw DataError("fit: cannot write " + result.val_log_path);
  if (fresh) {
    log << "epoch\tstep\tloss\tlr\tgrad_norm\twall_s\n";
    val_log << "epoch\ttrain_loss\tval_si_sdr\tval_si_sdri\tskipped\tbest\n";
  }

  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t batches = train.size() / per;
  for (std::size_t epoch = st.epoch; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::mt19937_64 rng(mix_seed(mix_seed(config.seed, kShuffleStream), epoch));
    std::shuffle(order.begin(), order.end(), rng);

    auto load = [&](std::size_t b) {
      std::vector<Utterance> utts;
      for (std::size_t k = 0; k < per; ++k) utts.push_back(train.get(order[b * per + k]));
      return make_batch(utts, stft_config);
    };
    std::future<Batch> next;
    if (config.threads > 1) next = std::async(std::launch::async, load, std::size_t(0));

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      Batch batch;
      if (config.threads > 1) {
        batch = next.get();
        if (b + 1 < batches) next = std::async(std::launch::async, load, b + 1);
      } else {
        batch = load(b);
      }
      const std::uint64_t dseed = mix_seed(mix_seed(config.seed, kDropoutStream), st.step);
      const StepReport r = train_step(model, opt, batch, lr, config, dseed);
      ++st.step;
      if (r.skipped) {
        ++rec.skipped;
      } else {
        loss_sum += r.loss.loss;
        ++loss_n;
      }
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << epoch << '\t' << st.step << '\t' << num(r.loss.loss) << '\t' << num(lr) << '\t'
          << num(r.grad_norm) << '\t' << num(wall) << '\n';
    }
    log.flush();
    rec.train_loss = loss_n ? loss_sum / double(loss_n) : std::nan("");
    st.epoch = epoch + 1;

    double val_sdr = std::nan(""), val_sdri = std::nan("");
    if (validation) {
      const EvalTable table = evaluate_model(model, *validation, stft_config);
      val_sdr = table.mean_si_sdr;
      val_sdri = table.mean_si_sdri;
      rec.best = val_sdri > st.best;
    } else {
      rec.best = true;
    }
    rec.val_si_sdri = val_sdri;
    if (rec.best) {
      st.best = validation ? val_sdri : st.best;
      st.best_epoch = epoch;
    }
    const Checkpoint ckpt = snapshot(model, opt, config, stft_config, sample_rate, st);
    save_checkpoint(result.last_checkpoint, ckpt);
    if (rec.best) save_checkpoint(result.best_checkpoint, ckpt);
    val_log << epoch << '\t' << num(rec.train_loss) << '\t' << num(val_sdr) << '\t'
            << num(val_sdri) << '\t' << rec.skipped << '\t' << (rec.best ? 1 : 0) << '\n';
    val_log.flush();
    if (options.progress) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      char line[200];
      std::snprintf(line, sizeof line,
                    "epoch %zu: train loss %.3f, val SI-SDRi %.2f dB, %zu skipped, %.0f s%s\n",
                    epoch, rec.train_loss, val_sdri, rec.skipped, wall, rec.best ? " (best)" : "");
      *options.progress << line << std::flush;
    }
    result.epochs.push_back(rec);
  }
  result.best_si_sdri = st.best;
  result.steps = st.step;
  return result;
}

}  // namespace

FitResult fit(const ExampleSource& train, const ExampleSource* validation,
              const ModelConfig& model_config, const TrainConfig& config,
              const StftConfig& stft_config, const FitOptions& options) {
  if (config.precision == Precision::Float64) {
    return fit_impl<double>(train, validation, model_config, config, stft_config, options);
  }
  return fit_impl<float>(train, validation, model_config, config, stft_config, options);
}

#define NBSEP_INSTANTIATE_TRAINER(T)                                                     \
  template struct OptimizerState<T>;                                                     \
  template void enable_gradients(Model<T>&);                                             \
  template LossReport compute_gradients(Model<T>&, const Batch&, std::uint64_t);         \
  template double global_grad_norm(const Model<T>&);                                     \
  template double clip_gradients(Model<T>&, double);                                     \
  template void adam_update(Model<T>&, OptimizerState<T>&, double);                      \
  template StepReport train_step(Model<T>&, OptimizerState<T>&, const Batch&, double,    \
                                 const TrainConfig&, std::uint64_t);                     \
  template SpeakerSignals separate(Model<T>&, const Waveform&, const StftConfig&,        \
                                   std::size_t, AttentionRecord*);                       \
  template EvalTable evaluate_model(Model<T>&, const ExampleSource&, const StftConfig&,  \
                                    std::size_t);                                        \
  template void store_optimizer(Checkpoint&, const Model<T>&, const OptimizerState<T>&); \
  template OptimizerState<T> restore_optimizer(const Checkpoint&, const Model<T>&,       \
                                               const TrainConfig&);

NBSEP_INSTANTIATE_TRAINER(float)
NBSEP_INSTANTIATE_TRAINER(double)

}  // namespace nbsep
