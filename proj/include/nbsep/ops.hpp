// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Differentiable operations used by the separation network and its loss.
//
// Every op takes a nullable tape. With a null tape (or when no input requires
// a gradient) the op is a plain forward evaluation. Sequence-shaped inputs are
// laid out as [..., T, channels]: all leading dimensions index independent
// sequences of length T.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nbsep/tensor.hpp"

namespace nbsep {

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

/// y = x W^T + b over the last dimension. weight: [out, in], bias: [out].
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias);

/// 1-D convolution along T with zero "same" padding.
/// x: [..., T, Cin], kernels: [Cout, Cin/groups, K] with K odd, bias: [Cout].
template <typename T>
Tensor<T> grouped_conv1d(Tape<T>* tape, const Tensor<T>& x,
                         const Tensor<T>& kernels, const Tensor<T>& bias,
                         std::size_t groups);

template <typename T>
Tensor<T> silu(Tape<T>* tape, const Tensor<T>& x);

/// Numerically stable softmax of one score vector.
template <typename T>
std::vector<T> softmax(std::span<const T> scores);

/// Softmax over the last dimension.
template <typename T>
Tensor<T> softmax_last(Tape<T>* tape, const Tensor<T>& x);

/// Inverted dropout. Identity (same handle) when p == 0.
template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& x, double p,
                  std::uint64_t seed);

/// Scaled dot-product attention per sequence and head, no positional terms.
/// q, k, v: [..., T, H]; H divisible by heads. When probs is non-null it
/// receives the attention weights laid out [sequence, head, query, key].
template <typename T>
Tensor<T> multi_head_attention(Tape<T>* tape, const Tensor<T>& q,
                               const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t heads,
                               std::vector<T>* probs = nullptr);

/// Scalar sum_j weights[j] * x[j].
template <typename T>
Tensor<T> weighted_sum(Tape<T>* tape, const Tensor<T>& x,
                       std::span<const T> weights);

/// Mean of all elements as a scalar tensor.
template <typename T>
Tensor<T> mean_all(Tape<T>* tape, const Tensor<T>& x);

/// Uniform fan-in initialisation in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
void init_uniform_fan_in(Tensor<T>& t, std::size_t fan_in,
                         std::uint64_t seed);

}  // namespace nbsep
