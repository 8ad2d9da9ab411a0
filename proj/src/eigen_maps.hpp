// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>

namespace nbsep::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Row-major block views with an explicit row stride.
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

// y = exp(x) elementwise. Every element goes through Eigen's packet kernel on
// an aligned block of fixed size, so results do not depend on the address or
// length of the buffers (a plain Map peels a scalar head by alignment, and
// the scalar and packet exp differ in the last bit). x and y may alias.
template <typename T>
void exp_into(const T* x, T* y, std::size_t n) {
  constexpr std::size_t kBlock = 16;
  using Block = Eigen::Array<T, kBlock, 1>;
  alignas(64) T buf[kBlock];
  for (std::size_t i = 0; i < n; i += kBlock) {
    const std::size_t m = std::min(kBlock, n - i);
    std::copy(x + i, x + i + m, buf);
    std::fill(buf + m, buf + kBlock, T(0));
    Eigen::Map<Block, Eigen::Aligned64> b(buf);
    b = b.exp();
    std::copy(buf, buf + m, y + i);
  }
}

}  // namespace nbsep::detail
