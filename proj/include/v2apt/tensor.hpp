// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "v2apt/errors.hpp"

namespace v2apt {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor handle. Copies share storage; the data buffer is
/// treated as immutable once an op has produced it, except for parameter
/// leaves updated by initializers and the optimizer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  bool is_same(const Tensor& other) const noexcept { return node_ == other.node_; }

  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node().data.size(); }

  std::span<const T> data() const { return node().data; }
  std::span<T> mutable_data() { return node().data; }
  T item() const;

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool value) { node().requires_grad = value; }

  bool has_grad() const { return node().grad_allocated; }
  std::span<const T> grad() const { return node().grad; }
  /// Gradient buffer, allocated as zeros on first access.
  std::span<T> mutable_grad() const;
  void zero_grad() const;
  void clear_grad();

  /// Deep copy of the values with no gradient participation.
  Tensor detach() const;

 private:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool grad_allocated = false;
    bool requires_grad = false;
  };

  Node& node() const;

  std::shared_ptr<Node> node_;
};

/// Ordered record of executed primitives. Constructing a Tape makes it the
/// recording target for the current thread until it is destroyed; ops record
/// only when a tape is active and at least one input requires grad.
template <typename T>
class Tape {
 public:
  using Adjoint = std::function<void(std::span<const T> grad_out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() noexcept;

  void record(std::string_view op, std::vector<Tensor<T>> inputs, const Tensor<T>& output,
              Adjoint adjoint);

  /// Seeds d(loss)/d(loss) = 1 and replays adjoints once each, newest first.
  /// Every grad-requiring input seen on the tape ends with a grad buffer,
  /// zero when it does not reach the loss.
  void backward(const Tensor<T>& loss);

  std::size_t size() const noexcept { return entries_.size(); }
  /// Distinct op names in first-recorded order.
  std::vector<std::string> op_names() const;
  void clear() noexcept { entries_.clear(); }

 private:
  friend class NoGradGuard;

  struct Entry {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    Adjoint adjoint;
  };

  std::vector<Entry> entries_;
  Tape* previous_;
  static thread_local Tape* current_;
};

/// Suspends recording on both precisions for the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<float>* saved_f32_;
  Tape<double>* saved_f64_;
};

/// Test hook: while alive, the adjoint of every op named `op` on this thread
/// receives its output gradient multiplied by `scale`.
class ScopedAdjointFault {
 public:
  ScopedAdjointFault(std::string op, double scale);
  ~ScopedAdjointFault();
  ScopedAdjointFault(const ScopedAdjointFault&) = delete;
  ScopedAdjointFault& operator=(const ScopedAdjointFault&) = delete;

  static const std::string* active_op() noexcept;
  static double active_scale() noexcept;
};

// ---------------------------------------------------------------------------
// Primitives. Every op validates shapes and throws ShapeError naming both
// operands on mismatch.

/// a[m×k] · b[k×n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Per-batch product of a[g×m×k] and b[g×k×n] (b[g×n×k] with transpose_b).
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value);
/// x[..., n] + b[n], broadcast over all leading axes.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
/// 2-D transpose.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
/// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Sum of all elements, shape {}.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// Reduction over one axis; the axis is removed from the result shape.
template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis);

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

inline constexpr double kLayerNormEps = 1e-6;
/// Normalizes over the last axis, then applies gamma/beta of that width.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = kLayerNormEps);

/// Rows of table[v×d] selected by `indices`, shape {indices.size(), d}.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::size_t> indices);

/// Mean softmax cross-entropy of logits[b×c] against integer labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Standard-normal constant; never participates in gradients.
template <typename T>
Tensor<T> random_normal(Shape shape, Rng& rng);

}  // namespace v2apt
