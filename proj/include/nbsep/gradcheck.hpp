// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "nbsep/tensor.hpp"

namespace nbsep {

inline constexpr double kGradCheckFloor = 1e-6;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // number of scalar inputs compared
  bool finite = true;       // false when any analytic or numeric value is not finite

  bool passed(double tol) const { return finite && max_rel_error < tol; }
};

/// A differentiable function of the tensors it closes over. It must build its
/// output through the given tape; the output may have any shape.
using GradFn = std::function<Tensor<double>(Tape<double>&)>;

/// Compares reverse-mode gradients against central differences.
///
/// The output y of `fn` is reduced to sum_j w_j y_j with weights w drawn
/// uniformly from [-1, 1] using `seed`, and every element of every tensor in
/// `inputs` is perturbed by +-h. The error per element is
/// |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor).
/// The floor sits above the round-off of a central difference, so entries
/// whose true gradient is zero (e.g. key biases under softmax) are compared
/// in absolute terms instead of dividing noise by noise.
GradCheckResult check_gradients(const GradFn& fn,
                                std::vector<Tensor<double>> inputs,
                                std::uint64_t seed, double h = 1e-5);

/// Convenience overload for a unary op.
GradCheckResult check_gradients(
    const std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>& op,
    Tensor<double> input, std::uint64_t seed, double h = 1e-5);

}  // namespace nbsep
