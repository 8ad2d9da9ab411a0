// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Normalisation layers over hidden activations laid out U x F x T x H.
//
//   GBN  statistics per (u, t) over all frequencies and hidden units
//   BN   statistics per hidden unit over (u, f, t); running averages at eval
//   LN   statistics per (u, f, t) over hidden units
//   GN   statistics per (u, f, t, group) over the group's hidden units

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nbsep/tensor.hpp"

namespace nbsep {

// Identity passes activations through; used to isolate other paths in tests.
enum class NormKind { GBN, BN, LN, GN, Identity };
enum class Mode { Train, Eval };

std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& name);

template <typename T>
struct NormParams {
  NormKind kind = NormKind::GBN;
  Tensor<T> gamma;  // [H], initialised to 1
  Tensor<T> beta;   // [H], initialised to 0
  double eps = 1e-5;
  std::size_t groups = 8;  // GN only
  // BN only.
  double momentum = 0.1;
  std::vector<double> running_mean, running_var;
  bool has_running_stats = false;

  NormParams() = default;
  NormParams(NormKind k, std::size_t hidden, double epsilon = 1e-5);
  std::size_t hidden() const { return gamma.numel(); }
};

template <typename T>
Tensor<T> gbn(Tape<T>* tape, const Tensor<T>& h, const NormParams<T>& params);

template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& h, NormParams<T>& params,
                     Mode mode);

template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& h,
                     const NormParams<T>& params);

template <typename T>
Tensor<T> group_norm(Tape<T>* tape, const Tensor<T>& h,
                     const NormParams<T>& params);

/// Dispatches on params.kind. Only BN distinguishes the two modes.
template <typename T>
Tensor<T> apply_norm(Tape<T>* tape, const Tensor<T>& h, NormParams<T>& params,
                     Mode mode);

}  // namespace nbsep
