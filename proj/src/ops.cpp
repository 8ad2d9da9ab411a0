// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "eigen_maps.hpp"
#include "seed_mix.hpp"

namespace nbsep {

using detail::ArrMap;
using detail::ConstArrMap;
using detail::ConstMatMap;
using detail::ConstStridedMap;
using detail::MatMap;
using detail::RowMat;
using detail::StridedMap;

namespace {

std::string dims(const Shape& s) { return shape_str(s); }

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a,
                        const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + dims(a.shape()) +
                     " vs " + dims(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  if (needs_grad(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || bias.rank() != 1 ||
      weight.dim(1) != x.shape().back() || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("linear: input " + dims(x.shape()) + ", weight " +
                     dims(weight.shape()) + ", bias " + dims(bias.shape()));
  }
  const std::size_t in = weight.dim(1);
  const std::size_t out_dim = weight.dim(0);
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor<T> out(out_shape);

  ConstMatMap<T> X(x.data(), rows, in);
  ConstMatMap<T> W(weight.data(), out_dim, in);
  MatMap<T> Y(out.data(), rows, out_dim);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), out_dim);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += b;

  if (needs_grad(tape, x, weight, bias)) {
    out.set_requires_grad(true);
    tape->record([x, weight, bias, out, rows, in, out_dim]() mutable {
      if (!out.has_grad()) return;
      ConstMatMap<T> G(out.grad().data(), rows, out_dim);
      if (x.requires_grad()) {
        MatMap<T> GX(x.grad().data(), rows, in);
        ConstMatMap<T> W(weight.data(), out_dim, in);
        GX.noalias() += G * W;
      }
      if (weight.requires_grad()) {
        MatMap<T> GW(weight.grad().data(), out_dim, in);
        ConstMatMap<T> X(x.data(), rows, in);
        GW.noalias() += G.transpose() * X;
      }
      if (bias.requires_grad()) {
        // Plain loop: Eigen's column reduction peels by alignment, which
        // changes the last bit from run to run.
        const T* g = out.grad().data();
        T* gb = bias.grad().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
      }
    });
  }
  return out;
}

namespace {

// Kernels [Cout, Cin/G, K] rearranged to [G][K][Cin/G][Cout/G], so the
// innermost loop of every pass runs over contiguous output channels.
template <typename T>
std::vector<T> taps_by_group(const T* w, std::size_t groups, std::size_t cin_g,
                             std::size_t cout_g, std::size_t kernel) {
  std::vector<T> out(groups * kernel * cin_g * cout_g);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t o = 0; o < cout_g; ++o)
      for (std::size_t j = 0; j < cin_g; ++j)
        for (std::size_t k = 0; k < kernel; ++k) {
          out[((g * kernel + k) * cin_g + j) * cout_g + o] =
              w[((g * cout_g + o) * cin_g + j) * kernel + k];
        }
  return out;
}

// y[o] += w[o] * v for o < n; a fixed n lets the compiler emit whole vectors.
template <std::size_t N, typename T>
inline void axpy_fixed(T* __restrict y, const T* __restrict w, T v) {
  for (std::size_t o = 0; o < N; ++o) y[o] += w[o] * v;
}

template <typename T>
inline void axpy(T* __restrict y, const T* __restrict w, T v, std::size_t n) {
  switch (n) {
    case 8: return axpy_fixed<8>(y, w, v);
    case 16: return axpy_fixed<16>(y, w, v);
    case 32: return axpy_fixed<32>(y, w, v);
    case 64: return axpy_fixed<64>(y, w, v);
    default:
      for (std::size_t o = 0; o < n; ++o) y[o] += w[o] * v;
  }
}

}  // namespace

template <typename T>
Tensor<T> grouped_conv1d(Tape<T>* tape, const Tensor<T>& x,
                         const Tensor<T>& kernels, const Tensor<T>& bias,
                         std::size_t groups) {
  if (x.rank() < 2 || kernels.rank() != 3 || bias.rank() != 1 || groups == 0) {
    throw ShapeError("grouped_conv1d: input " + dims(x.shape()) +
                     ", kernels " + dims(kernels.shape()) + ", bias " +
                     dims(bias.shape()));
  }
  const std::size_t cin = x.shape().back(), steps = x.dim(x.rank() - 2);
  const std::size_t cout = kernels.dim(0), K = kernels.dim(2);
  if (cin % groups != 0 || cout % groups != 0 || kernels.dim(1) != cin / groups ||
      K % 2 == 0 || bias.dim(0) != cout || steps == 0) {
    throw ShapeError("grouped_conv1d: input " + dims(x.shape()) +
                     ", kernels " + dims(kernels.shape()) + ", bias " +
                     dims(bias.shape()) + ", groups " +
                     std::to_string(groups) +
                     " (need Cin, Cout divisible by groups, odd K, T >= 1)");
  }
  const std::size_t seqs = x.numel() / (steps * cin);
  const std::size_t cin_g = cin / groups, cout_g = cout / groups;
  const std::ptrdiff_t pad = std::ptrdiff_t(K - 1) / 2;

  Shape out_shape = x.shape();
  out_shape.back() = cout;
  Tensor<T> out(out_shape);
  const std::vector<T> w = taps_by_group(kernels.data(), groups, cin_g, cout_g, K);
  const T* xd = x.data();
  T* yd = out.data();
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t t = 0; t < steps; ++t) {
      T* y = yd + (s * steps + t) * cout;
      for (std::size_t c = 0; c < cout; ++c) y[c] = bias[c];
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t src = std::ptrdiff_t(t + k) - pad;
        if (src < 0 || src >= std::ptrdiff_t(steps)) continue;
        const T* xr = xd + (s * steps + std::size_t(src)) * cin;
        for (std::size_t g = 0; g < groups; ++g) {
          T* yg = y + g * cout_g;
          const T* wk = w.data() + (g * K + k) * cin_g * cout_g;
          for (std::size_t j = 0; j < cin_g; ++j) {
            const T xv = xr[g * cin_g + j];
            axpy(yg, wk + j * cout_g, xv, cout_g);
          }
        }
      }
    }
  }

  if (needs_grad(tape, x, kernels, bias)) {
    out.set_requires_grad(true);
    tape->record([x, kernels, bias, out, w, seqs, steps, cin, cout, K, groups,
                  cin_g, cout_g, pad]() mutable {
      if (!out.has_grad()) return;
      const T* gy = out.grad().data();
      const T* xd = x.data();
      T* gx = x.requires_grad() ? x.grad().data() : nullptr;
      // Per (g, k) the transposed tap, [Cout/G][Cin/G].
      std::vector<T> wt_all(w.size());
      for (std::size_t gk = 0; gk < groups * K; ++gk)
        for (std::size_t j = 0; j < cin_g; ++j)
          for (std::size_t o = 0; o < cout_g; ++o) {
            wt_all[(gk * cout_g + o) * cin_g + j] = w[(gk * cin_g + j) * cout_g + o];
          }
      std::vector<T> gw;
      if (kernels.requires_grad()) gw.assign(w.size(), T(0));
      for (std::size_t s = 0; s < seqs; ++s) {
        for (std::size_t t = 0; t < steps; ++t) {
          const T* gyr = gy + (s * steps + t) * cout;
          for (std::size_t k = 0; k < K; ++k) {
            const std::ptrdiff_t src = std::ptrdiff_t(t + k) - pad;
            if (src < 0 || src >= std::ptrdiff_t(steps)) continue;
            const std::size_t row = (s * steps + std::size_t(src)) * cin;
            for (std::size_t g = 0; g < groups; ++g) {
              const T* gyg = gyr + g * cout_g;
              const std::size_t off = (g * K + k) * cin_g * cout_g;
              for (std::size_t j = 0; j < cin_g; ++j) {
                const std::size_t wj = off + j * cout_g;
                if (!gw.empty()) axpy(gw.data() + wj, gyg, xd[row + g * cin_g + j], cout_g);
              }
              if (gx) {
                const T* wt = wt_all.data() + off;
                for (std::size_t o = 0; o < cout_g; ++o) {
                  axpy(gx + row + g * cin_g, wt + o * cin_g, gyg[o], cin_g);
                }
              }
            }
          }
        }
      }
      if (!gw.empty()) {
        auto gk = kernels.grad();
        for (std::size_t g = 0; g < groups; ++g)
          for (std::size_t o = 0; o < cout_g; ++o)
            for (std::size_t j = 0; j < cin_g; ++j)
              for (std::size_t k = 0; k < K; ++k) {
                gk[((g * cout_g + o) * cin_g + j) * K + k] +=
                    gw[((g * K + k) * cin_g + j) * cout_g + o];
              }
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        const std::size_t rows = seqs * steps;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cout; ++c) gb[c] += gy[r * cout + c];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> silu(Tape<T>* tape, const Tensor<T>& x) {
  const auto n = Eigen::Index(x.numel());
  Tensor<T> out(x.shape());
  std::vector<T> sig(x.numel());
  const T* xv = x.data();
  T* y = out.data();
  for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = -xv[i];
  detail::exp_into(sig.data(), sig.data(), sig.size());
  for (std::size_t i = 0; i < sig.size(); ++i) {
    sig[i] = T(1) / (T(1) + sig[i]);
    y[i] = xv[i] * sig[i];
  }
  if (needs_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, sig = std::move(sig), n]() mutable {
      if (!out.has_grad()) return;
      ConstArrMap<T> g(out.grad().data(), n), xa(x.data(), n), s(sig.data(), n);
      ArrMap<T>(x.grad().data(), n) += g * s * (T(1) + xa * (T(1) - s));
    });
  }
  return out;
}

template <typename T>
std::vector<T> softmax(std::span<const T> scores) {
  std::vector<T> out(scores.begin(), scores.end());
  if (out.empty()) return out;
  const T mx = *std::max_element(out.begin(), out.end());
  T sum = 0;
  for (T& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (T& v : out) v /= sum;
  return out;
}

namespace {

template <typename T>
void softmax_inplace(T* row, std::size_t n) {
  T mx = row[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  for (std::size_t i = 0; i < n; ++i) row[i] -= mx;
  detail::exp_into(row, row, n);
  T sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += row[i];
  const T inv = T(1) / sum;
  for (std::size_t i = 0; i < n; ++i) row[i] *= inv;
}

// dx = y * (g - <g, y>) for one softmax row.
template <typename T>
void softmax_row_backward(const T* y, const T* g, T* gx, std::size_t n) {
  T dot = 0;
  for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
  for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * (g[i] - dot);
}

}  // namespace

template <typename T>
Tensor<T> softmax_last(Tape<T>* tape, const Tensor<T>& x) {
  const std::size_t n = x.shape().back();
  Tensor<T> out = x.clone();
  out.set_requires_grad(false);
  for (std::size_t r = 0; r < x.numel() / n; ++r) {
    softmax_inplace(out.data() + r * n, n);
  }
  if (needs_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < g.size() / n; ++r) {
        softmax_row_backward(out.data() + r * n, g.data() + r * n,
                             gx.data() + r * n, n);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& x, double p,
                  std::uint64_t seed) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const T keep_scale = T(1.0 / (1.0 - p));
  // Element i keeps its value unless the i-th draw of a counter-based stream
  // falls below p.
  const auto threshold = std::uint64_t(std::ldexp(p, 53));
  std::vector<T> mask(x.numel());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = (detail::mix_seed(seed, i) >> 11) < threshold ? T(0) : keep_scale;
    out[i] = x[i] * mask[i];
  }
  if (needs_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, mask = std::move(mask)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> multi_head_attention(Tape<T>* tape, const Tensor<T>& q,
                               const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t heads, std::vector<T>* probs) {
  require_same_shape("multi_head_attention", q, k);
  require_same_shape("multi_head_attention", q, v);
  if (q.rank() < 2 || heads == 0 || q.shape().back() % heads != 0) {
    throw ShapeError("multi_head_attention: input " + dims(q.shape()) +
                     " with " + std::to_string(heads) + " heads");
  }
  const std::size_t hidden = q.shape().back();
  const std::size_t steps = q.dim(q.rank() - 2);
  const std::size_t seqs = q.numel() / (steps * hidden);
  const std::size_t d = hidden / heads;
  const T scale = T(1) / std::sqrt(T(d));
  const std::size_t tt = steps * steps;

  Tensor<T> out(q.shape());
  std::vector<T> p_all(seqs * heads * tt);
  const Eigen::OuterStride<> stride(hidden);
  for (std::size_t s = 0; s < seqs; ++s) {
    const std::size_t base = s * steps * hidden;
    for (std::size_t h = 0; h < heads; ++h) {
      ConstStridedMap<T> Q(q.data() + base + h * d, steps, d, stride);
      ConstStridedMap<T> K(k.data() + base + h * d, steps, d, stride);
      ConstStridedMap<T> V(v.data() + base + h * d, steps, d, stride);
      T* pdata = p_all.data() + (s * heads + h) * tt;
      MatMap<T> P(pdata, steps, steps);
      P.noalias() = (Q * K.transpose()) * scale;
      for (std::size_t r = 0; r < steps; ++r) {
        softmax_inplace(pdata + r * steps, steps);
      }
      StridedMap<T> O(out.data() + base + h * d, steps, d, stride);
      O.noalias() += P * V;  // out starts zeroed; avoids a strided setZero
    }
  }
  if (probs) *probs = p_all;

  if (needs_grad(tape, q, k, v)) {
    out.set_requires_grad(true);
    tape->record([q, k, v, out, p_all = std::move(p_all), seqs, steps, hidden,
                  heads, d, scale, tt]() mutable {
      if (!out.has_grad()) return;
      const Eigen::OuterStride<> stride(hidden);
      T* gq = q.requires_grad() ? q.grad().data() : nullptr;
      T* gk = k.requires_grad() ? k.grad().data() : nullptr;
      T* gv = v.requires_grad() ? v.grad().data() : nullptr;
      const T* go = out.grad().data();
      RowMat<T> dP(steps, steps);
      for (std::size_t s = 0; s < seqs; ++s) {
        const std::size_t base = s * steps * hidden;
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = base + h * d;
          ConstStridedMap<T> Q(q.data() + off, steps, d, stride);
          ConstStridedMap<T> K(k.data() + off, steps, d, stride);
          ConstStridedMap<T> V(v.data() + off, steps, d, stride);
          ConstStridedMap<T> GO(go + off, steps, d, stride);
          ConstMatMap<T> P(p_all.data() + (s * heads + h) * tt, steps, steps);
          if (gv) {
            StridedMap<T> GV(gv + off, steps, d, stride);
            GV.noalias() += P.transpose() * GO;
          }
          if (!gq && !gk) continue;
          dP.noalias() = GO * V.transpose();
          for (std::size_t r = 0; r < steps; ++r) {
            T dot = 0;
            for (std::size_t c = 0; c < steps; ++c) dot += dP(r, c) * P(r, c);
            for (std::size_t c = 0; c < steps; ++c) {
              dP(r, c) = P(r, c) * (dP(r, c) - dot) * scale;
            }
          }
          if (gq) {
            StridedMap<T> GQ(gq + off, steps, d, stride);
            GQ.noalias() += dP * K;
          }
          if (gk) {
            StridedMap<T> GK(gk + off, steps, d, stride);
            GK.noalias() += dP.transpose() * Q;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> weighted_sum(Tape<T>* tape, const Tensor<T>& x,
                       std::span<const T> weights) {
  if (weights.size() != x.numel()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) +
                     " weights for input " + dims(x.shape()));
  }
  Tensor<T> out(Shape{1});
  T acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += weights[i] * x[i];
  out[0] = acc;
  if (needs_grad(tape, x)) {
    out.set_requires_grad(true);
    std::vector<T> w(weights.begin(), weights.end());
    tape->record([x, out, w = std::move(w)]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      auto gx = x.grad();
      for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(Shape{1});
  T acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
  const T inv = T(1) / T(x.numel());
  out[0] = acc * inv;
  if (needs_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, inv]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] * inv;
      for (T& v : x.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
void init_uniform_fan_in(Tensor<T>& t, std::size_t fan_in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(double(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> uni(-bound, bound);
  for (T& v : t.values()) v = T(uni(rng));
}

#define NBSEP_INSTANTIATE_OPS(T)                                              \
  template Tensor<T> add(Tape<T>*, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> linear(Tape<T>*, const Tensor<T>&, const Tensor<T>&,     \
                            const Tensor<T>&);                                \
  template Tensor<T> grouped_conv1d(Tape<T>*, const Tensor<T>&,               \
                                    const Tensor<T>&, const Tensor<T>&,       \
                                    std::size_t);                             \
  template Tensor<T> silu(Tape<T>*, const Tensor<T>&);                        \
  template std::vector<T> softmax(std::span<const T>);                        \
  template Tensor<T> softmax_last(Tape<T>*, const Tensor<T>&);                \
  template Tensor<T> dropout(Tape<T>*, const Tensor<T>&, double,              \
                             std::uint64_t);                                  \
  template Tensor<T> multi_head_attention(Tape<T>*, const Tensor<T>&,         \
                                          const Tensor<T>&, const Tensor<T>&, \
                                          std::size_t, std::vector<T>*);      \
  template Tensor<T> weighted_sum(Tape<T>*, const Tensor<T>&,                 \
                                  std::span<const T>);                        \
  template Tensor<T> mean_all(Tape<T>*, const Tensor<T>&);                    \
  template void init_uniform_fan_in(Tensor<T>&, std::size_t, std::uint64_t);

NBSEP_INSTANTIATE_OPS(float)
NBSEP_INSTANTIATE_OPS(double)

}  // namespace nbsep
