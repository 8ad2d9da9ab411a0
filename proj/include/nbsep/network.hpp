// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nbsep/normalization.hpp"
#include "nbsep/tensor.hpp"

namespace nbsep {

struct ModelConfig {
  std::size_t num_blocks = 8;
  std::size_t num_heads = 2;
  std::size_t hidden = 96;       // H1
  std::size_t ffn_hidden = 192;  // H2
  std::size_t conv_groups = 8;
  std::size_t input_kernel = 5;
  std::size_t conv_kernel = 3;
  std::size_t channels = 8;  // microphones C; the input width is 2C
  std::size_t speakers = 2;  // N; the output width is 2N
  double dropout = 0.1;
  // Normalisation inside the ConvFFN module. GBN is the proposed layer; the
  // others exist for ablation and replace the norm after the second
  // convolution (the norm in front of the module becomes LN).
  NormKind norm = NormKind::GBN;
  std::size_t gn_groups = 8;
  double norm_eps = 1e-5;
  double bn_momentum = 0.1;

  static ModelConfig small();
  static ModelConfig large();
  /// Desk-scale network: 2 blocks, H1 = 32, H2 = 64.
  static ModelConfig tiny();

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Attention weights kept from one forward pass: for every block a tensor
/// laid out [utterance, frequency, head, query, key].
struct AttentionRecord {
  std::size_t utterances = 0, freqs = 0, frames = 0, heads = 0;
  std::vector<std::vector<double>> blocks;

  double at(std::size_t block, std::size_t u, std::size_t f, std::size_t h,
            std::size_t q, std::size_t k) const {
    return blocks[block][(((u * freqs + f) * heads + h) * frames + q) * frames + k];
  }
};

struct AttentionSummary {
  std::size_t freqs = 0, frames = 0;
  std::vector<double> query_key;  // T x T, averaged over frequencies
  std::vector<double> freq_key;   // F x T, averaged over queries
};

/// Q-K and F-K maps of one (block, head, utterance).
AttentionSummary attention_summaries(const AttentionRecord& record,
                                     std::size_t block, std::size_t head,
                                     std::size_t utterance = 0);

template <typename T>
struct ForwardResult {
  Tensor<T> output;  // U x F x T x 2N
  AttentionRecord attention;
};

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }

  /// Trainable tensors in a fixed order with stable names.
  std::vector<NamedTensor<T>> parameters() const;
  std::size_t parameter_count() const;
  /// Normalisation layers by name (BN running statistics live here).
  std::vector<std::pair<std::string, NormParams<T>*>> norm_layers();
  std::vector<std::pair<std::string, const NormParams<T>*>> norm_layers() const;

  ForwardResult<T> forward(Tape<T>* tape, const Tensor<T>& input, Mode mode,
                           std::uint64_t dropout_seed = 0,
                           bool record_attention = false);

  Tensor<T> input_conv(Tape<T>* tape, const Tensor<T>& input) const;
  Tensor<T> mhsa_block(Tape<T>* tape, std::size_t block, const Tensor<T>& x,
                       Mode mode, std::uint64_t dropout_seed,
                       std::vector<T>* probs = nullptr) const;
  Tensor<T> convffn_block(Tape<T>* tape, std::size_t block, const Tensor<T>& x,
                          Mode mode, std::uint64_t dropout_seed);

  /// Copy with parameters converted to another precision.
  template <typename U>
  Model<U> cast() const;

 private:
  struct Block {
    NormParams<T> attn_norm;
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    NormParams<T> ffn_norm;
    Tensor<T> w1, b1;
    Tensor<T> conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
    NormParams<T> mid_norm;
    Tensor<T> w2, b2;
  };

  template <typename>
  friend class Model;

  Model() = default;

  ModelConfig config_;
  Tensor<T> in_w_, in_b_;
  std::vector<Block> blocks_;
  Tensor<T> out_w_, out_b_;
};

/// Parameter count of a configuration without allocating the model.
std::size_t count_parameters(const ModelConfig& config);

}  // namespace nbsep
