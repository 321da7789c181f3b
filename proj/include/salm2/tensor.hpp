#pragma once

// Minimal dense tensor with reverse-mode automatic differentiation.
//
// Tensors are contiguous row-major buffers wrapped in a graph node. Operations
// (see ops.hpp / conv.hpp) build a define-by-run graph; backward() walks it in
// reverse topological order. The scalar type is a template parameter: float is
// the production precision, double is used by the gradient-check tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "salm2/errors.hpp"

namespace salm2 {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// ---------------------------------------------------------------------------
// Grad mode

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---------------------------------------------------------------------------
// Graph node

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// ---------------------------------------------------------------------------
// Tensor handle

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape s) {
    auto n = std::make_shared<Node<T>>();
    n->value.assign(static_cast<size_t>(shape_numel(s)), T(0));
    n->shape = std::move(s);
    return Tensor(std::move(n));
  }

  static Tensor full(Shape s, T v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.values().begin(), t.values().end(), v);
    return t;
  }

  static Tensor from(Shape s, std::vector<T> v) {
    if (static_cast<int64_t>(v.size()) != shape_numel(s))
      throw ContractViolation("tensor data size " + std::to_string(v.size()) +
                              " does not match shape " + shape_str(s));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(s);
    n->value = std::move(v);
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  // Trainable parameter: participates in autograd.
  static Tensor param(Shape s, std::vector<T> v) {
    Tensor t = from(std::move(s), std::move(v));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
  int64_t numel() const { return node_->numel(); }

  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T item() const {
    if (numel() != 1) throw ContractViolation("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  // Gradient of the last backward() pass; zeros if never touched.
  const std::vector<T>& grad() const {
    static const std::vector<T> empty;
    return node_->grad.empty() ? empty : node_->grad;
  }
  std::vector<T>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  std::shared_ptr<Node<T>> node() const { return node_; }

  // Value copy with no graph history.
  Tensor detached() const {
    auto n = std::make_shared<Node<T>>();
    n->shape = node_->shape;
    n->value = node_->value;
    return Tensor(std::move(n));
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// ---------------------------------------------------------------------------
// Op plumbing

template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> value,
                         std::vector<std::shared_ptr<Node<T>>> parents,
                         std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool need = false;
  if (grad_enabled()) {
    for (const auto& p : parents)
      if (p->requires_grad) { need = true; break; }
  }
  if (need) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

// Reverse-mode sweep from a scalar root.
template <typename T>
void backward(const Tensor<T>& root) {
  if (root.numel() != 1)
    throw ContractViolation("backward() requires a scalar root, got " + shape_str(root.shape()));
  auto root_node = root.node();
  if (!root_node->requires_grad) return;

  // Iterative post-order DFS.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root_node.get(), 0);
  visited.insert(root_node.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* parent = node->parents[idx++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root_node->ensure_grad();
  root_node->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// Named trainable parameters, collected module by module in a stable order.
template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

namespace detail {

// Branch-free single-precision exp: range reduction against log2(e), degree-6
// polynomial, exponent reassembly through the float bit layout. Deterministic
// and auto-vectorizable; relative error stays below ~3e-7. The double
// overload keeps the libm path so gradient checks run at full precision.
inline float exp_fast(float x) {
  x = std::min(88.0f, std::max(-87.0f, x));
  const float log2e = 1.44269504088896341f;
  const float ln2_hi = 0.693359375f;
  const float ln2_lo = -2.12194440e-4f;
  const float t = x * log2e;
  const float n = std::floor(t + 0.5f);
  const float r = (x - n * ln2_hi) - n * ln2_lo;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float poly = p * r * r + r + 1.0f;
  const int32_t bits = (static_cast<int32_t>(n) + 127) << 23;
  float scale;
  std::memcpy(&scale, &bits, 4);
  return poly * scale;
}

inline float exp_impl(float x) { return exp_fast(x); }
inline double exp_impl(double x) { return std::exp(x); }

// Dot product over eight fixed accumulator lanes with a fixed combine order:
// bit-deterministic for any thread count, and vectorizable without
// reassociation permissions.
template <typename T>
inline T dot_lanes(const T* __restrict__ a, const T* __restrict__ b, int64_t n) {
  T lane[8] = {};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) lane[k] += a[i + k] * b[i + k];
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((lane[0] + lane[1]) + (lane[2] + lane[3])) +
          ((lane[4] + lane[5]) + (lane[6] + lane[7]))) +
         tail;
}

}  // namespace detail

template <typename T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  if (!all_finite(t.values())) throw NonFiniteError(std::string(what));
}

}  // namespace salm2
