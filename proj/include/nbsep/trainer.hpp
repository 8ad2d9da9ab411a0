// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "nbsep/checkpoint.hpp"
#include "nbsep/dataset.hpp"
#include "nbsep/loss_metrics.hpp"
#include "nbsep/narrowband.hpp"
#include "nbsep/network.hpp"
#include "nbsep/stft.hpp"

namespace nbsep {

enum class Precision { Float32, Float64 };
std::string to_string(Precision p);
Precision parse_precision(const std::string& name);

struct TrainConfig {
  double lr0 = 1e-3;
  double decay = 0.99;  // per epoch
  double clip_norm = 5.0;
  std::size_t utterances_per_batch = 2;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  Precision precision = Precision::Float32;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  /// 1 runs everything on the calling thread; more lets the next batch be
  /// prepared while the current one trains. Results do not depend on it.
  std::size_t threads = 1;

  /// lr0 * decay^epoch.
  double lr_at(std::size_t epoch) const;
  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static TrainConfig from_map(const std::map<std::string, std::string>& kv);
};

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> m, v;  // one per parameter, same order
  std::uint64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static OptimizerState init(const Model<T>& model, const TrainConfig& config);
};

/// Network input and time-domain targets of a group of equal-length
/// utterances. All frequencies of every utterance are present, as GBN needs.
struct Batch {
  NarrowbandBatch input;
  SpeakerSignals targets;
  std::vector<std::string> ids;
};

Batch make_batch(const std::vector<Utterance>& utterances, const StftConfig& config,
                 std::size_t reference_channel = 0);

/// Marks every parameter as trainable.
template <typename T>
void enable_gradients(Model<T>& model);

/// Clears the gradients, runs forward (train mode), the fPIT loss and the
/// backward pass. Gradients are left on the parameters.
template <typename T>
LossReport compute_gradients(Model<T>& model, const Batch& batch,
                             std::uint64_t dropout_seed);

/// sqrt of the sum of squared gradient entries over all parameters.
template <typename T>
double global_grad_norm(const Model<T>& model);

/// Rescales all gradients so their global norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_gradients(Model<T>& model, double max_norm);

template <typename T>
void adam_update(Model<T>& model, OptimizerState<T>& state, double lr);

struct StepReport {
  LossReport loss;
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
  bool skipped = false;    // non-finite loss or gradient; no update made
};

template <typename T>
StepReport train_step(Model<T>& model, OptimizerState<T>& state, const Batch& batch,
                      double lr, const TrainConfig& config, std::uint64_t dropout_seed);

/// Eval-mode separation of one mixture: U x N reference-channel estimates
/// (U = 1) with the input's length.
template <typename T>
SpeakerSignals separate(Model<T>& model, const Waveform& mixture, const StftConfig& config,
                        std::size_t reference_channel = 0,
                        AttentionRecord* attention = nullptr);

/// Separates every utterance of `source` and scores it against its targets.
template <typename T>
EvalTable evaluate_model(Model<T>& model, const ExampleSource& source,
                         const StftConfig& config, std::size_t reference_channel = 0);

struct FitOptions {
  std::string out_dir;            // receives checkpoints and logs
  std::string resume_from;        // checkpoint path; empty starts fresh
  std::ostream* progress = nullptr;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;   // mean over steps that were not skipped
  double val_si_sdri = 0.0;  // NaN without a validation set
  std::size_t skipped = 0;
  bool best = false;
};

struct FitResult {
  std::string best_checkpoint, last_checkpoint, log_path, val_log_path;
  std::vector<EpochRecord> epochs;  // epochs run by this call
  double best_si_sdri = 0.0;
  std::uint64_t steps = 0;          // optimizer steps in total, resumed ones included
};

/// Trains config.epochs epochs (continuing after the epochs stored in a resume
/// checkpoint). Per step one line goes to train_log.tsv; per epoch the
/// validation SI-SDRi goes to val_log.tsv, last.ckpt is rewritten and
/// best.ckpt is kept for the best validation score. Without a validation set
/// the latest epoch counts as best.
FitResult fit(const ExampleSource& train, const ExampleSource* validation,
              const ModelConfig& model_config, const TrainConfig& config,
              const StftConfig& stft_config, const FitOptions& options);

/// Optimizer moments and training progress, stored next to the model.
template <typename T>
void store_optimizer(Checkpoint& ckpt, const Model<T>& model, const OptimizerState<T>& state);
template <typename T>
OptimizerState<T> restore_optimizer(const Checkpoint& ckpt, const Model<T>& model,
                                    const TrainConfig& config);

/// STFT configuration a checkpoint was trained with.
StftConfig checkpoint_stft(const Checkpoint& ckpt);
double checkpoint_sample_rate(const Checkpoint& ckpt);

}  // namespace nbsep
