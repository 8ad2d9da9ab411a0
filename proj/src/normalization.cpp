// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/normalization.hpp"

#include <cmath>
#include <stdexcept>

namespace nbsep {

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::GBN: return "gbn";
    case NormKind::BN: return "bn";
    case NormKind::LN: return "ln";
    case NormKind::GN: return "gn";
    case NormKind::Identity: return "identity";
  }
  return "?";
}

NormKind parse_norm_kind(const std::string& name) {
  if (name == "gbn" || name == "GBN") return NormKind::GBN;
  if (name == "bn" || name == "BN") return NormKind::BN;
  if (name == "ln" || name == "LN") return NormKind::LN;
  if (name == "gn" || name == "GN") return NormKind::GN;
  if (name == "identity" || name == "none") return NormKind::Identity;
  throw std::invalid_argument("unknown normalization '" + name +
                              "' (expected gbn, bn, ln, gn or identity)");
}

template <typename T>
NormParams<T>::NormParams(NormKind k, std::size_t hidden, double epsilon)
    : kind(k), gamma({hidden}, T(1), true), beta({hidden}, T(0), true),
      eps(epsilon) {
  if (!(eps > 0.0)) throw std::invalid_argument("normalization: eps must be > 0");
}

namespace {

void require_rank4(const char* op, const Shape& s, std::size_t hidden) {
  if (s.size() != 4 || s[3] != hidden) {
    throw ShapeError(std::string(op) + ": expected U x F x T x " +
                     std::to_string(hidden) + ", got " + shape_str(s));
  }
}

// Normalises equally sized statistic groups of a rows x H view of `h`.
// Element (r, i) belongs to group row_base[r] + unit_group[i]; every pass
// walks memory in order. The affine parameters are indexed by the hidden
// unit i.
template <typename T>
Tensor<T> normalize_groups(Tape<T>* tape, const Tensor<T>& h,
                           const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, std::size_t groups,
                           std::vector<std::size_t> row_base,
                           std::vector<std::size_t> unit_group) {
  const std::size_t H = gamma.numel(), rows = row_base.size();
  const double size = double(h.numel()) / double(groups);
  std::vector<double> acc(groups, 0.0);
  const T* x = h.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* a = acc.data() + row_base[r];
    const T* xr = x + r * H;
    for (std::size_t i = 0; i < H; ++i) a[unit_group[i]] += xr[i];
  }
  std::vector<T> mean(groups), inv_std(groups);
  std::vector<double> mu(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    mu[g] = acc[g] / size;
    mean[g] = T(mu[g]);
    acc[g] = 0.0;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* a = acc.data() + row_base[r];
    const double* m = mu.data() + row_base[r];
    const T* xr = x + r * H;
    for (std::size_t i = 0; i < H; ++i) {
      const double d = double(xr[i]) - m[unit_group[i]];
      a[unit_group[i]] += d * d;
    }
  }
  for (std::size_t g = 0; g < groups; ++g) inv_std[g] = T(1.0 / std::sqrt(acc[g] / size + eps));
  Tensor<T> out(h.shape());
  T* y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* m = mean.data() + row_base[r];
    const T* s = inv_std.data() + row_base[r];
    const T* xr = x + r * H;
    T* yr = y + r * H;
    for (std::size_t i = 0; i < H; ++i) {
      const std::size_t g = unit_group[i];
      yr[i] = (xr[i] - m[g]) * s[g] * gamma[i] + beta[i];
    }
  }
  if (needs_grad(tape, h, gamma, beta)) {
    out.set_requires_grad(true);
    tape->record([h, gamma, beta, out, mean = std::move(mean),
                  inv_std = std::move(inv_std), groups, size, H,
                  row_base = std::move(row_base),
                  unit_group = std::move(unit_group)]() mutable {
      if (!out.has_grad()) return;
      const std::size_t rows = row_base.size();
      const T* gy = out.grad().data();
      const T* x = h.data();
      std::vector<double> sum_g(groups, 0.0), sum_gx(groups, 0.0);
      std::vector<double> ggamma(H, 0.0), gbeta(H, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t b = row_base[r];
        const T* xr = x + r * H;
        const T* gr = gy + r * H;
        for (std::size_t i = 0; i < H; ++i) {
          const std::size_t g = b + unit_group[i];
          const double xhat = double((xr[i] - mean[g]) * inv_std[g]);
          const double gn = double(gr[i]) * double(gamma[i]);
          sum_g[g] += gn;
          sum_gx[g] += gn * xhat;
          ggamma[i] += double(gr[i]) * xhat;
          gbeta[i] += double(gr[i]);
        }
      }
      if (gamma.requires_grad()) {
        auto gg = gamma.grad();
        for (std::size_t i = 0; i < H; ++i) gg[i] += T(ggamma[i]);
      }
      if (beta.requires_grad()) {
        auto gb = beta.grad();
        for (std::size_t i = 0; i < H; ++i) gb[i] += T(gbeta[i]);
      }
      if (!h.requires_grad()) return;
      T* gx = h.grad().data();
      for (std::size_t g = 0; g < groups; ++g) {
        sum_g[g] /= size;
        sum_gx[g] /= size;
      }
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t b = row_base[r];
        const T* xr = x + r * H;
        const T* gr = gy + r * H;
        T* gxr = gx + r * H;
        for (std::size_t i = 0; i < H; ++i) {
          const std::size_t g = b + unit_group[i];
          const double xhat = double((xr[i] - mean[g]) * inv_std[g]);
          const double gn = double(gr[i]) * double(gamma[i]);
          gxr[i] += T(double(inv_std[g]) * (gn - sum_g[g] - xhat * sum_gx[g]));
        }
      }
    });
  }
  return out;
}

std::vector<std::size_t> iota_vec(std::size_t n, std::size_t step = 1) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i * step;
  return v;
}

}  // namespace

template <typename T>
Tensor<T> gbn(Tape<T>* tape, const Tensor<T>& h, const NormParams<T>& params) {
  const std::size_t H = params.hidden();
  require_rank4("gbn", h.shape(), H);
  const std::size_t U = h.dim(0), F = h.dim(1), T_ = h.dim(2);
  if (F * H < 2) {
    throw ShapeError("gbn: F*H = " + std::to_string(F * H) +
                     " < 2 leaves the variance undefined");
  }
  // Group (u, t) gathers all frequencies and hidden units of a frame.
  std::vector<std::size_t> base(U * F * T_);
  for (std::size_t r = 0; r < base.size(); ++r) base[r] = (r / (F * T_)) * T_ + r % T_;
  return normalize_groups(tape, h, params.gamma, params.beta, params.eps, U * T_,
                          std::move(base), std::vector<std::size_t>(H, 0));
}

template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& h,
                     const NormParams<T>& params) {
  const std::size_t H = params.hidden();
  if (h.rank() < 1 || h.shape().back() != H) {
    throw ShapeError("layer_norm: last dimension of " + shape_str(h.shape()) +
                     " is not " + std::to_string(H));
  }
  const std::size_t rows = h.numel() / H;
  return normalize_groups(tape, h, params.gamma, params.beta, params.eps, rows,
                          iota_vec(rows), std::vector<std::size_t>(H, 0));
}

template <typename T>
Tensor<T> group_norm(Tape<T>* tape, const Tensor<T>& h,
                     const NormParams<T>& params) {
  const std::size_t H = params.hidden();
  if (h.rank() < 1 || h.shape().back() != H) {
    throw ShapeError("group_norm: last dimension of " + shape_str(h.shape()) +
                     " is not " + std::to_string(H));
  }
  if (params.groups == 0 || H % params.groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(H) +
                     " hidden units are not divisible into " +
                     std::to_string(params.groups) + " groups");
  }
  const std::size_t size = H / params.groups, rows = h.numel() / H;
  std::vector<std::size_t> unit(H);
  for (std::size_t i = 0; i < H; ++i) unit[i] = i / size;
  return normalize_groups(tape, h, params.gamma, params.beta, params.eps,
                          rows * params.groups, iota_vec(rows, params.groups),
                          std::move(unit));
}

template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& h, NormParams<T>& params,
                     Mode mode) {
  const std::size_t H = params.hidden();
  if (h.rank() < 1 || h.shape().back() != H) {
    throw ShapeError("batch_norm: last dimension of " + shape_str(h.shape()) +
                     " is not " + std::to_string(H));
  }
  const std::size_t rows = h.numel() / H;
  if (mode == Mode::Train) {
    const std::size_t batch = h.rank() >= 2 ? rows / h.dim(h.rank() - 2) : 1;
    if (batch < 2) {
      throw ShapeError("batch_norm: training needs at least 2 sequences, got " +
                       shape_str(h.shape()));
    }
    // One group per hidden unit over all rows.
    Tensor<T> out = normalize_groups(tape, h, params.gamma, params.beta, params.eps, H,
                                     std::vector<std::size_t>(rows, 0), iota_vec(H));
    if (!params.has_running_stats) {
      params.running_mean.assign(H, 0.0);
      params.running_var.assign(H, 1.0);
      params.has_running_stats = true;
    }
    for (std::size_t i = 0; i < H; ++i) {
      double s = 0.0;
      for (std::size_t r = 0; r < rows; ++r) s += h[r * H + i];
      const double mu = s / double(rows);
      double v = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = h[r * H + i] - mu;
        v += d * d;
      }
      const double unbiased = rows > 1 ? v / double(rows - 1) : 0.0;
      const double m = params.momentum;
      params.running_mean[i] = (1.0 - m) * params.running_mean[i] + m * mu;
      params.running_var[i] = (1.0 - m) * params.running_var[i] + m * unbiased;
    }
    return out;
  }

  if (!params.has_running_stats) {
    throw std::logic_error("batch_norm: evaluation before any training step");
  }
  std::vector<T> scale(H), shift(H);
  for (std::size_t i = 0; i < H; ++i) {
    const double inv = 1.0 / std::sqrt(params.running_var[i] + params.eps);
    scale[i] = T(inv);
    shift[i] = T(-params.running_mean[i] * inv);
  }
  Tensor<T> out(h.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < H; ++i) {
      const std::size_t idx = r * H + i;
      out[idx] = (h[idx] * scale[i] + shift[i]) * params.gamma[i] + params.beta[i];
    }
  const Tensor<T> gamma = params.gamma, beta = params.beta;
  if (needs_grad(tape, h, gamma, beta)) {
    out.set_requires_grad(true);
    tape->record([h, gamma, beta, out, scale, shift, rows, H]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < H; ++i) {
          const std::size_t idx = r * H + i;
          if (h.requires_grad()) h.grad()[idx] += gy[idx] * gamma[i] * scale[i];
          if (gamma.requires_grad())
            gamma.grad()[i] += gy[idx] * (h[idx] * scale[i] + shift[i]);
          if (beta.requires_grad()) beta.grad()[i] += gy[idx];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> apply_norm(Tape<T>* tape, const Tensor<T>& h, NormParams<T>& params,
                     Mode mode) {
  switch (params.kind) {
    case NormKind::GBN: return gbn(tape, h, params);
    case NormKind::BN: return batch_norm(tape, h, params, mode);
    case NormKind::LN: return layer_norm(tape, h, params);
    case NormKind::GN: return group_norm(tape, h, params);
    case NormKind::Identity: return h;
  }
  throw std::logic_error("apply_norm: unknown kind");
}

#define NBSEP_INSTANTIATE_NORM(T)                                              \
  template struct NormParams<T>;                                               \
  template Tensor<T> gbn(Tape<T>*, const Tensor<T>&, const NormParams<T>&);    \
  template Tensor<T> batch_norm(Tape<T>*, const Tensor<T>&, NormParams<T>&,    \
                                Mode);                                         \
  template Tensor<T> layer_norm(Tape<T>*, const Tensor<T>&,                    \
                                const NormParams<T>&);                         \
  template Tensor<T> group_norm(Tape<T>*, const Tensor<T>&,                    \
                                const NormParams<T>&);                         \
  template Tensor<T> apply_norm(Tape<T>*, const Tensor<T>&, NormParams<T>&,    \
                                Mode);

NBSEP_INSTANTIATE_NORM(float)
NBSEP_INSTANTIATE_NORM(double)

}  // namespace nbsep
