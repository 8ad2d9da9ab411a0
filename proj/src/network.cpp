// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/network.hpp"

#include <sstream>
#include <stdexcept>

#include "nbsep/ops.hpp"
#include "format.hpp"
#include "seed_mix.hpp"

namespace nbsep {

ModelConfig ModelConfig::small() { return ModelConfig{}; }

ModelConfig ModelConfig::large() {
  ModelConfig c;
  c.num_blocks = 12;
  c.hidden = 192;
  c.ffn_hidden = 384;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.num_blocks = 2;
  c.hidden = 32;
  c.ffn_hidden = 64;
  c.channels = 4;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("model config: " + msg);
  };
  if (num_blocks == 0) fail("num_blocks must be >= 1");
  if (num_heads == 0 || hidden % num_heads != 0)
    fail("hidden (" + std::to_string(hidden) + ") must be divisible by num_heads (" +
         std::to_string(num_heads) + ")");
  if (conv_groups == 0 || ffn_hidden % conv_groups != 0)
    fail("ffn_hidden (" + std::to_string(ffn_hidden) +
         ") must be divisible by conv_groups (" + std::to_string(conv_groups) + ")");
  if (input_kernel % 2 == 0 || conv_kernel % 2 == 0) fail("kernel sizes must be odd");
  if (channels == 0 || speakers == 0) fail("channels and speakers must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (norm == NormKind::GN && (gn_groups == 0 || ffn_hidden % gn_groups != 0))
    fail("ffn_hidden must be divisible by gn_groups");
  if (!(norm_eps > 0.0)) fail("norm_eps must be > 0");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  const auto num = detail::format_double;
  return {
      {"model.num_blocks", std::to_string(num_blocks)},
      {"model.num_heads", std::to_string(num_heads)},
      {"model.hidden", std::to_string(hidden)},
      {"model.ffn_hidden", std::to_string(ffn_hidden)},
      {"model.conv_groups", std::to_string(conv_groups)},
      {"model.input_kernel", std::to_string(input_kernel)},
      {"model.conv_kernel", std::to_string(conv_kernel)},
      {"model.channels", std::to_string(channels)},
      {"model.speakers", std::to_string(speakers)},
      {"model.dropout", num(dropout)},
      {"model.norm", to_string(norm)},
      {"model.gn_groups", std::to_string(gn_groups)},
      {"model.norm_eps", num(norm_eps)},
      {"model.bn_momentum", num(bn_momentum)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
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
  size("model.num_blocks", c.num_blocks);
  size("model.num_heads", c.num_heads);
  size("model.hidden", c.hidden);
  size("model.ffn_hidden", c.ffn_hidden);
  size("model.conv_groups", c.conv_groups);
  size("model.input_kernel", c.input_kernel);
  size("model.conv_kernel", c.conv_kernel);
  size("model.channels", c.channels);
  size("model.speakers", c.speakers);
  real("model.dropout", c.dropout);
  if (auto* v = get("model.norm")) c.norm = parse_norm_kind(*v);
  size("model.gn_groups", c.gn_groups);
  real("model.norm_eps", c.norm_eps);
  real("model.bn_momentum", c.bn_momentum);
  return c;
}

std::size_t count_parameters(const ModelConfig& c) {
  const std::size_t h1 = c.hidden, h2 = c.ffn_hidden;
  const std::size_t input = 2 * c.channels * h1 * c.input_kernel + h1;
  const std::size_t attention = 2 * h1 + 4 * (h1 * h1 + h1);
  const std::size_t conv = h2 * (h2 / c.conv_groups) * c.conv_kernel + h2;
  const std::size_t ffn = 2 * h1 + (h1 * h2 + h2) + 3 * conv + 2 * h2 + (h2 * h1 + h1);
  const std::size_t output = h1 * 2 * c.speakers + 2 * c.speakers;
  return input + c.num_blocks * (attention + ffn) + output;
}

namespace {

using detail::mix_seed;

template <typename T>
Tensor<T> make_param(Shape shape, std::size_t fan_in, std::uint64_t seed,
                     std::uint64_t& slot) {
  Tensor<T> t(std::move(shape), T(0), true);
  init_uniform_fan_in(t, fan_in, mix_seed(seed, slot++));
  return t;
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& c = config_;
  const std::size_t h1 = c.hidden, h2 = c.ffn_hidden, cin = 2 * c.channels;
  std::uint64_t slot = 0;
  in_w_ = make_param<T>({h1, cin, c.input_kernel}, cin * c.input_kernel, seed, slot);
  in_b_ = make_param<T>({h1}, cin * c.input_kernel, seed, slot);
  // Ablations swap the mid-module norm; the norm in front of the module
  // then becomes LN so only one layer type varies.
  NormKind ffn_kind = NormKind::LN;
  if (c.norm == NormKind::GBN || c.norm == NormKind::Identity) ffn_kind = c.norm;
  for (std::size_t l = 0; l < c.num_blocks; ++l) {
    Block b;
    b.attn_norm = NormParams<T>(NormKind::LN, h1, c.norm_eps);
    b.wq = make_param<T>({h1, h1}, h1, seed, slot);
    b.bq = make_param<T>({h1}, h1, seed, slot);
    b.wk = make_param<T>({h1, h1}, h1, seed, slot);
    b.bk = make_param<T>({h1}, h1, seed, slot);
    b.wv = make_param<T>({h1, h1}, h1, seed, slot);
    b.bv = make_param<T>({h1}, h1, seed, slot);
    b.wo = make_param<T>({h1, h1}, h1, seed, slot);
    b.bo = make_param<T>({h1}, h1, seed, slot);
    b.ffn_norm = NormParams<T>(ffn_kind, h1, c.norm_eps);
    b.w1 = make_param<T>({h2, h1}, h1, seed, slot);
    b.b1 = make_param<T>({h2}, h1, seed, slot);
    const std::size_t cg = h2 / c.conv_groups, fan = cg * c.conv_kernel;
    b.conv1_w = make_param<T>({h2, cg, c.conv_kernel}, fan, seed, slot);
    b.conv1_b = make_param<T>({h2}, fan, seed, slot);
    b.conv2_w = make_param<T>({h2, cg, c.conv_kernel}, fan, seed, slot);
    b.conv2_b = make_param<T>({h2}, fan, seed, slot);
    b.mid_norm = NormParams<T>(c.norm, h2, c.norm_eps);
    b.mid_norm.groups = c.gn_groups;
    b.mid_norm.momentum = c.bn_momentum;
    b.conv3_w = make_param<T>({h2, cg, c.conv_kernel}, fan, seed, slot);
    b.conv3_b = make_param<T>({h2}, fan, seed, slot);
    b.w2 = make_param<T>({h1, h2}, h2, seed, slot);
    b.b2 = make_param<T>({h1}, h2, seed, slot);
    blocks_.push_back(std::move(b));
  }
  out_w_ = make_param<T>({2 * c.speakers, h1}, h1, seed, slot);
  out_b_ = make_param<T>({2 * c.speakers}, h1, seed, slot);
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  out.push_back({"input_conv.weight", in_w_});
  out.push_back({"input_conv.bias", in_b_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    out.push_back({p + "attn_norm.gamma", b.attn_norm.gamma});
    out.push_back({p + "attn_norm.beta", b.attn_norm.beta});
    out.push_back({p + "attn.q.weight", b.wq});
    out.push_back({p + "attn.q.bias", b.bq});
    out.push_back({p + "attn.k.weight", b.wk});
    out.push_back({p + "attn.k.bias", b.bk});
    out.push_back({p + "attn.v.weight", b.wv});
    out.push_back({p + "attn.v.bias", b.bv});
    out.push_back({p + "attn.out.weight", b.wo});
    out.push_back({p + "attn.out.bias", b.bo});
    out.push_back({p + "ffn_norm.gamma", b.ffn_norm.gamma});
    out.push_back({p + "ffn_norm.beta", b.ffn_norm.beta});
    out.push_back({p + "ffn.linear1.weight", b.w1});
    out.push_back({p + "ffn.linear1.bias", b.b1});
    out.push_back({p + "ffn.conv1.weight", b.conv1_w});
    out.push_back({p + "ffn.conv1.bias", b.conv1_b});
    out.push_back({p + "ffn.conv2.weight", b.conv2_w});
    out.push_back({p + "ffn.conv2.bias", b.conv2_b});
    out.push_back({p + "ffn.mid_norm.gamma", b.mid_norm.gamma});
    out.push_back({p + "ffn.mid_norm.beta", b.mid_norm.beta});
    out.push_back({p + "ffn.conv3.weight", b.conv3_w});
    out.push_back({p + "ffn.conv3.bias", b.conv3_b});
    out.push_back({p + "ffn.linear2.weight", b.w2});
    out.push_back({p + "ffn.linear2.bias", b.b2});
  }
  out.push_back({"output.weight", out_w_});
  out.push_back({"output.bias", out_b_});
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
std::vector<std::pair<std::string, NormParams<T>*>> Model<T>::norm_layers() {
  std::vector<std::pair<std::string, NormParams<T>*>> out;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    out.emplace_back(p + "attn_norm", &blocks_[l].attn_norm);
    out.emplace_back(p + "ffn_norm", &blocks_[l].ffn_norm);
    out.emplace_back(p + "ffn.mid_norm", &blocks_[l].mid_norm);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const NormParams<T>*>> Model<T>::norm_layers()
    const {
  std::vector<std::pair<std::string, const NormParams<T>*>> out;
  for (auto& [name, p] : const_cast<Model*>(this)->norm_layers()) {
    out.emplace_back(name, p);
  }
  return out;
}

template <typename T>
Tensor<T> Model<T>::input_conv(Tape<T>* tape, const Tensor<T>& input) const {
  if (input.rank() != 4 || input.dim(3) != 2 * config_.channels) {
    throw ShapeError("model: input " + shape_str(input.shape()) +
                     " does not match U x F x T x " +
                     std::to_string(2 * config_.channels));
  }
  if (input.dim(2) < 1) throw ShapeError("model: input has no frames");
  return grouped_conv1d(tape, input, in_w_, in_b_, 1);
}

template <typename T>
Tensor<T> Model<T>::mhsa_block(Tape<T>* tape, std::size_t block,
                               const Tensor<T>& x, Mode mode,
                               std::uint64_t dropout_seed,
                               std::vector<T>* probs) const {
  const Block& b = blocks_.at(block);
  const Tensor<T> a = layer_norm(tape, x, b.attn_norm);
  const Tensor<T> q = linear(tape, a, b.wq, b.bq);
  const Tensor<T> k = linear(tape, a, b.wk, b.bk);
  const Tensor<T> v = linear(tape, a, b.wv, b.bv);
  const Tensor<T> att = multi_head_attention(tape, q, k, v, config_.num_heads, probs);
  Tensor<T> o = linear(tape, att, b.wo, b.bo);
  if (mode == Mode::Train) {
    o = dropout(tape, o, config_.dropout, mix_seed(dropout_seed, 2 * block));
  }
  return add(tape, x, o);
}

template <typename T>
Tensor<T> Model<T>::convffn_block(Tape<T>* tape, std::size_t block,
                                  const Tensor<T>& x, Mode mode,
                                  std::uint64_t dropout_seed) {
  Block& b = blocks_.at(block);
  const std::size_t g = config_.conv_groups;
  Tensor<T> h = apply_norm(tape, x, b.ffn_norm, mode);
  h = silu(tape, linear(tape, h, b.w1, b.b1));
  h = silu(tape, grouped_conv1d(tape, h, b.conv1_w, b.conv1_b, g));
  h = grouped_conv1d(tape, h, b.conv2_w, b.conv2_b, g);
  h = silu(tape, apply_norm(tape, h, b.mid_norm, mode));
  h = silu(tape, grouped_conv1d(tape, h, b.conv3_w, b.conv3_b, g));
  h = linear(tape, h, b.w2, b.b2);
  if (mode == Mode::Train) {
    h = dropout(tape, h, config_.dropout, mix_seed(dropout_seed, 2 * block + 1));
  }
  return add(tape, x, h);
}

template <typename T>
ForwardResult<T> Model<T>::forward(Tape<T>* tape, const Tensor<T>& input,
                                   Mode mode, std::uint64_t dropout_seed,
                                   bool record_attention) {
  ForwardResult<T> res;
  Tensor<T> x = input_conv(tape, input);
  if (record_attention) {
    res.attention.utterances = input.dim(0);
    res.attention.freqs = input.dim(1);
    res.attention.frames = input.dim(2);
    res.attention.heads = config_.num_heads;
  }
  std::vector<T> probs;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    x = mhsa_block(tape, l, x, mode, dropout_seed,
                   record_attention ? &probs : nullptr);
    if (record_attention) res.attention.blocks.emplace_back(probs.begin(), probs.end());
    x = convffn_block(tape, l, x, mode, dropout_seed);
  }
  res.output = linear(tape, x, out_w_, out_b_);
  return res;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> m;
  m.config_ = config_;
  auto conv = [](const Tensor<T>& t) {
    Tensor<U> out = tensor_cast<U>(t);
    out.set_requires_grad(true);
    return out;
  };
  auto conv_norm = [&](const NormParams<T>& n) {
    NormParams<U> o;
    o.kind = n.kind;
    o.gamma = conv(n.gamma);
    o.beta = conv(n.beta);
    o.eps = n.eps;
    o.groups = n.groups;
    o.momentum = n.momentum;
    o.running_mean = n.running_mean;
    o.running_var = n.running_var;
    o.has_running_stats = n.has_running_stats;
    return o;
  };
  m.in_w_ = conv(in_w_);
  m.in_b_ = conv(in_b_);
  for (const Block& b : blocks_) {
    typename Model<U>::Block o;
    o.attn_norm = conv_norm(b.attn_norm);
    o.wq = conv(b.wq); o.bq = conv(b.bq);
    o.wk = conv(b.wk); o.bk = conv(b.bk);
    o.wv = conv(b.wv); o.bv = conv(b.bv);
    o.wo = conv(b.wo); o.bo = conv(b.bo);
    o.ffn_norm = conv_norm(b.ffn_norm);
    o.w1 = conv(b.w1); o.b1 = conv(b.b1);
    o.conv1_w = conv(b.conv1_w); o.conv1_b = conv(b.conv1_b);
    o.conv2_w = conv(b.conv2_w); o.conv2_b = conv(b.conv2_b);
    o.mid_norm = conv_norm(b.mid_norm);
    o.conv3_w = conv(b.conv3_w); o.conv3_b = conv(b.conv3_b);
    o.w2 = conv(b.w2); o.b2 = conv(b.b2);
    m.blocks_.push_back(std::move(o));
  }
  m.out_w_ = conv(out_w_);
  m.out_b_ = conv(out_b_);
  return m;
}

AttentionSummary attention_summaries(const AttentionRecord& record,
                                     std::size_t block, std::size_t head,
                                     std::size_t utterance) {
  if (block >= record.blocks.size() || head >= record.heads ||
      utterance >= record.utterances) {
    throw std::out_of_range("attention: block " + std::to_string(block) +
                            ", head " + std::to_string(head) +
                            " not in record with " +
                            std::to_string(record.blocks.size()) + " blocks and " +
                            std::to_string(record.heads) + " heads");
  }
  const std::size_t F = record.freqs, T = record.frames;
  AttentionSummary s;
  s.freqs = F;
  s.frames = T;
  s.query_key.assign(T * T, 0.0);
  s.freq_key.assign(F * T, 0.0);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t q = 0; q < T; ++q)
      for (std::size_t k = 0; k < T; ++k) {
        const double v = record.at(block, utterance, f, head, q, k);
        s.query_key[q * T + k] += v / double(F);
        s.freq_key[f * T + k] += v / double(T);
      }
  return s;
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace nbsep
