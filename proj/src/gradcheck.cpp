// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nbsep/ops.hpp"

namespace nbsep {

namespace {

double reduce(const Tensor<double>& y, const std::vector<double>& w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) acc += w[i] * y[i];
  return acc;
}

}  // namespace

GradCheckResult check_gradients(const GradFn& fn,
                                std::vector<Tensor<double>> inputs,
                                std::uint64_t seed, double h) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.drop_grad();
  }

  Tape<double> tape;
  Tensor<double> y = fn(tape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> w(y.numel());
  for (double& v : w) v = uni(rng);
  Tensor<double> loss = weighted_sum<double>(&tape, y, w);
  tape.backward(loss);

  GradCheckResult res;
  Tape<double> scratch;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double up = reduce(fn(scratch), w);
      scratch.clear();
      t[i] = orig - h;
      const double down = reduce(fn(scratch), w);
      scratch.clear();
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
        res.finite = false;
        continue;
      }
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric),
                                     kGradCheckFloor});
      const double err = std::abs(analytic[i] - numeric) / scale;
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.checked;
    }
  }
  return res;
}

GradCheckResult check_gradients(
    const std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>& op,
    Tensor<double> input, std::uint64_t seed, double h) {
  return check_gradients([&](Tape<double>& tape) { return op(tape, input); },
                         {input}, seed, h);
}

}  // namespace nbsep
