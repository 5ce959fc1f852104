#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "msnc/common.hpp"

namespace msnc {

template <typename T>
class Tensor;

namespace detail {

inline int64_t next_seq() {
  static std::atomic<int64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool& finite_check_flag() {
  thread_local bool enabled = true;
  return enabled;
}

// One record of the differentiation graph. Creation order (seq) is a
// topological order, so backward walks records once, newest first, and
// gradient accumulation across fan-out is deterministic.
template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> value;
  std::unique_ptr<std::vector<T>> grad;
  bool requires_grad = false;
  bool leaf = true;
  int64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  const char* op = "leaf";

  std::vector<T>& ensure_grad() {
    if (!grad) grad = std::make_unique<std::vector<T>>(value->size(), T(0));
    return *grad;
  }
};

// Branch-free exponent-mask scan; vectorizes to integer compares.
inline bool all_finite_span(const float* p, size_t n) {
  uint32_t bad = 0;
  for (size_t i = 0; i < n; ++i) {
    uint32_t bits;
    std::memcpy(&bits, p + i, 4);
    bad |= static_cast<uint32_t>((bits & 0x7f800000u) == 0x7f800000u);
  }
  return bad == 0;
}

inline bool all_finite_span(const double* p, size_t n) {
  uint64_t bad = 0;
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits;
    std::memcpy(&bits, p + i, 8);
    bad |= static_cast<uint64_t>((bits & 0x7ff0000000000000ULL) == 0x7ff0000000000000ULL);
  }
  return bad == 0;
}

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
  if (!finite_check_flag()) return;
  if (!all_finite_span(v.data(), v.size()))
    throw NumericError(std::string("non-finite value produced by op '") + op + "'");
}

}  // namespace detail

// Disables graph recording (and the per-op finite scan) for the scope.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }
inline void set_finite_checks(bool on) { detail::finite_check_flag() = on; }

// Dense row-major tensor participating in a reverse-mode graph. Values are
// immutable once created; `mutable_data` exists for leaves only (parameter
// initialization and optimizer updates between steps).
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor full(Shape shape, T fill) {
    Tensor t;
    t.node_ = std::make_shared<detail::Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::make_shared<std::vector<T>>(msnc::numel(t.node_->shape), fill);
    t.node_->seq = detail::next_seq();
    return t;
  }

  static Tensor from_vector(Shape shape, std::vector<T> data) {
    if (msnc::numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("from_vector: " + shape_str(shape) + " does not hold " +
                       std::to_string(data.size()) + " scalars");
    Tensor t;
    t.node_ = std::make_shared<detail::Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::make_shared<std::vector<T>>(std::move(data));
    t.node_->seq = detail::next_seq();
    return t;
  }

  static Tensor scalar(T v) { return from_vector({}, {v}); }

  // View over an existing buffer (used by reshape; values stay shared).
  static Tensor make_view(Shape shape, std::shared_ptr<std::vector<T>> data) {
    if (msnc::numel(shape) != static_cast<int64_t>(data->size()))
      throw ShapeError("make_view: shape/buffer mismatch");
    Tensor t;
    t.node_ = std::make_shared<detail::Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->seq = detail::next_seq();
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->value->size()); }

  int64_t size(int axis) const {
    int nd = ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ShapeError("axis out of range");
    return node_->shape[axis];
  }

  std::span<const T> data() const { return {node_->value->data(), node_->value->size()}; }

  std::span<T> mutable_data() {
    if (!node_->leaf) throw UsageError("mutable_data is only valid on leaf tensors");
    return {node_->value->data(), node_->value->size()};
  }

  T item() const {
    if (numel() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return (*node_->value)[0];
  }

  Tensor& set_requires_grad(bool on = true) {
    if (!node_->leaf) throw UsageError("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
    return *this;
  }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return node_->grad != nullptr; }
  std::span<const T> grad() const {
    if (!node_->grad) throw UsageError("tensor has no gradient");
    return {node_->grad->data(), node_->grad->size()};
  }
  Tensor grad_tensor() const {
    return Tensor::from_vector(shape(), std::vector<T>(grad().begin(), grad().end()));
  }
  void zero_grad() { node_->grad.reset(); }

  // Accumulates g into the leaf gradient; used by the optimizer path.
  void accumulate_grad(std::span<const T> g) {
    auto& dst = node_->ensure_grad();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }

  std::shared_ptr<detail::Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

// Builds an op result node: eager forward value plus a backward record when
// grad mode is on and any input needs gradients.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backprop) {
  check_finite(value, op);
  Tensor<T> out = Tensor<T>::from_vector(std::move(shape), std::move(value));
  Node<T>& n = *out.node();
  n.leaf = false;
  n.op = op;
  bool needs = false;
  if (grad_mode_flag()) {
    for (const auto& in : inputs) needs = needs || in.node()->requires_grad;
  }
  if (needs) {
    n.requires_grad = true;
    n.parents.reserve(inputs.size());
    for (auto& in : inputs) n.parents.push_back(in.node());
    n.backprop = std::move(backprop);
  }
  return out;
}

template <typename T>
void add_to(std::vector<T>& dst, std::span<const T> src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
// into every reachable tensor with requires_grad; leaf gradients persist
// across calls until zero_grad.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw UsageError("backward: loss must be scalar");
  auto root = loss.node();
  if (!root->requires_grad) throw UsageError("backward: loss does not require grad");

  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<detail::Node<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->seq > b->seq; });

  root->ensure_grad()[0] += T(1);
  for (auto* n : order) {
    if (n->backprop && n->grad) n->backprop(*n);
  }
}

}  // namespace msnc
