// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nbsep {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown whenever operand dimensions do not fit an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor with an optional gradient buffer.
///
/// A Tensor is a handle: copies share storage. Use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->values.size(); }

  T* data() { return node_->values.data(); }
  const T* data() const { return node_->values.data(); }
  std::span<T> values() { return node_->values; }
  std::span<const T> values() const { return node_->values; }
  T& operator[](std::size_t i) { return node_->values[i]; }
  const T& operator[](std::size_t i) const { return node_->values[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; allocated (zero-filled) on first access. The buffer
  /// belongs to the shared storage, so const handles may accumulate into it.
  std::span<T> grad() const;
  void zero_grad() const;
  void drop_grad() const { node_->grad.clear(); node_->grad.shrink_to_fit(); }

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

/// Ordered record of backward rules.
///
/// Every differentiable op pushes exactly one closure per call; replaying the
/// closures in reverse order accumulates one gradient contribution per use of
/// each input tensor.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void()>;

  void record(Backward fn) { ops_.push_back(std::move(fn)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the trace. The tape is cleared
  /// afterwards so captured intermediates are released.
  void backward(Tensor<T>& loss);

 private:
  std::vector<Backward> ops_;
};

/// True when an op with these inputs must record a backward rule.
template <typename T, typename... Ts>
bool needs_grad(const Tape<T>* tape, const Ts&... inputs) {
  return tape != nullptr && (inputs.requires_grad() || ...);
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  std::vector<To> out(src.values().begin(), src.values().end());
  return Tensor<To>(src.shape(), std::move(out), src.requires_grad());
}

}  // namespace nbsep
