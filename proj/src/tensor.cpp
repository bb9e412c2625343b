// SPDX-License-Identifier: Apache-2.0
#include "v2apt/tensor.hpp"

#include <algorithm>
#include <optional>
#include <sstream>
#include <unordered_set>

namespace v2apt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
typename Tensor<T>::Node& Tensor<T>::node() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = node().shape;
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node().data[0];
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() const {
  auto& n = node();
  if (!n.grad_allocated) {
    n.grad.assign(n.data.size(), T(0));
    n.grad_allocated = true;
  }
  return n.grad;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  auto g = mutable_grad();
  std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
void Tensor<T>::clear_grad() {
  auto& n = node();
  n.grad.clear();
  n.grad.shrink_to_fit();
  n.grad_allocated = false;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), node().data, false);
}

// ---------------------------------------------------------------------------

namespace {

struct FaultState {
  std::optional<std::string> op;
  double scale = 1.0;
};

thread_local FaultState g_fault;

}  // namespace

ScopedAdjointFault::ScopedAdjointFault(std::string op, double scale) {
  g_fault.op = std::move(op);
  g_fault.scale = scale;
}

ScopedAdjointFault::~ScopedAdjointFault() { g_fault = FaultState{}; }

const std::string* ScopedAdjointFault::active_op() noexcept {
  return g_fault.op ? &*g_fault.op : nullptr;
}

double ScopedAdjointFault::active_scale() noexcept { return g_fault.scale; }

template <typename T>
thread_local Tape<T>* Tape<T>::current_ = nullptr;

template <typename T>
Tape<T>* Tape<T>::current() noexcept {
  return current_;
}

template <typename T>
Tape<T>::Tape() : previous_(current_) {
  current_ = this;
}

template <typename T>
Tape<T>::~Tape() {
  current_ = previous_;
}

template <typename T>
void Tape<T>::record(std::string_view op, std::vector<Tensor<T>> inputs, const Tensor<T>& output,
                     Adjoint adjoint) {
  entries_.push_back(Entry{std::string(op), std::move(inputs), output, std::move(adjoint)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (entries_.empty()) throw ContractError("backward() on an empty tape");
  Tensor<T> seed = loss;
  seed.zero_grad();
  seed.mutable_grad()[0] = T(1);

  const std::string* fault_op = ScopedAdjointFault::active_op();
  std::vector<T> scaled;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    Tensor<T>& out = it->output;
    if (!out.has_grad()) continue;
    std::span<const T> g = out.grad();
    if (fault_op && *fault_op == it->op) {
      scaled.assign(g.begin(), g.end());
      const auto s = static_cast<T>(ScopedAdjointFault::active_scale());
      for (auto& v : scaled) v *= s;
      g = scaled;
    }
    it->adjoint(g);
  }
  for (auto& e : entries_) {
    for (auto& in : e.inputs) {
      if (in.requires_grad() && !in.has_grad()) in.zero_grad();
    }
  }
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
  std::vector<std::string> names;
  std::unordered_set<std::string> seen;
  for (const auto& e : entries_) {
    if (seen.insert(e.op).second) names.push_back(e.op);
  }
  return names;
}

NoGradGuard::NoGradGuard()
    : saved_f32_(Tape<float>::current_), saved_f64_(Tape<double>::current_) {
  Tape<float>::current_ = nullptr;
  Tape<double>::current_ = nullptr;
}

NoGradGuard::~NoGradGuard() {
  Tape<float>::current_ = saved_f32_;
  Tape<double>::current_ = saved_f64_;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace v2apt
