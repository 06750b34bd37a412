// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace gpic {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

[[noreturn]] inline void tensor_fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

namespace detail {

// Autograd is gated per thread: sampling and evaluation run with gradients
// disabled so no graph is built. Independent graphs on independent threads
// never share nodes.
inline thread_local bool g_grad_enabled = true;

template <class S>
struct NodeT {
  Shape shape;
  std::vector<S> data;
  bool requires_grad = false;
  std::vector<S> grad;                                 // lazily allocated
  std::vector<std::shared_ptr<NodeT>> parents;         // inputs of the op
  std::function<void(NodeT&)> backprop;                // fills parents' grads

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
};

}  // namespace detail

// Disables graph construction for the current thread while alive.
struct NoGradGuard {
  NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
  ~NoGradGuard() { detail::g_grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::g_grad_enabled; }

// Dense row-major n-d array with optional reverse-mode gradient tracking.
// A TensorT is a cheap value handle onto a shared node; the node's data is
// never mutated by operations (values_mut() exists for owners: parameter
// initialization, optimizer updates, loaders).
template <class S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return from_data(std::move(shape), {}, requires_grad, /*zero_fill=*/true);
  }

  static TensorT full(Shape shape, S value) {
    TensorT t = zeros(std::move(shape));
    std::fill(t.n_->data.begin(), t.n_->data.end(), value);
    return t;
  }

  static TensorT scalar(S value) { return full({1}, value); }

  static TensorT from_data(Shape shape, std::vector<S> data,
                           bool requires_grad = false, bool zero_fill = false) {
    for (int d : shape)
      if (d <= 0) tensor_fail("tensor: non-positive dimension in " + shape_str(shape));
    auto n = std::make_shared<detail::NodeT<S>>();
    n->shape = std::move(shape);
    std::int64_t count = shape_numel(n->shape);
    if (zero_fill) {
      n->data.assign(static_cast<std::size_t>(count), S(0));
    } else {
      if (static_cast<std::int64_t>(data.size()) != count)
        tensor_fail("tensor: data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(n->shape));
      n->data = std::move(data);
    }
    n->requires_grad = requires_grad;
    TensorT t;
    t.n_ = std::move(n);
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return n_->numel(); }

  std::span<const S> values() const { return {n_->data.data(), n_->data.size()}; }
  std::span<S> values_mut() { return {n_->data.data(), n_->data.size()}; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool v) { n_->requires_grad = v; }

  bool has_grad() const { return n_->grad.size() == n_->data.size(); }
  std::span<const S> grad() const {
    if (!has_grad()) tensor_fail("tensor: gradient not populated");
    return {n_->grad.data(), n_->grad.size()};
  }
  std::span<S> grad_mut() {
    n_->ensure_grad();
    return {n_->grad.data(), n_->grad.size()};
  }
  void zero_grad() {
    if (has_grad()) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
  }

  S item() const {
    if (numel() != 1) tensor_fail("tensor: item() on non-scalar " + shape_str(shape()));
    return n_->data[0];
  }

  // Value copy with no graph attachment.
  TensorT detached() const {
    return from_data(n_->shape, n_->data, /*requires_grad=*/false);
  }

  // Runs reverse-mode accumulation from this scalar. Every reachable tensor
  // with requires_grad receives d(this)/d(tensor) in its grad buffer
  // (accumulated on top of existing grad contents).
  void backward() const {
    if (numel() != 1) tensor_fail("backward: loss must be scalar, got " + shape_str(shape()));
    auto* root = n_.get();
    // Topological order by iterative post-order DFS.
    std::vector<detail::NodeT<S>*> order;
    std::unordered_set<detail::NodeT<S>*> seen;
    struct Frame {
      detail::NodeT<S>* node;
      std::size_t next_parent;
    };
    std::vector<Frame> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        detail::NodeT<S>* p = f.node->parents[f.next_parent++].get();
        if (seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
    root->ensure_grad();
    root->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::NodeT<S>* node = *it;
      if (node->backprop && node->grad.size() == node->data.size()) node->backprop(*node);
    }
  }

  // Internal: op constructors use these to wire the graph.
  std::shared_ptr<detail::NodeT<S>> node() const { return n_; }
  static TensorT wrap(std::shared_ptr<detail::NodeT<S>> n) {
    TensorT t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::NodeT<S>> n_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <class S>
void backward(const TensorT<S>& loss) {
  loss.backward();
}

namespace detail {

// Result-node builder for ops: allocates the output and, when grad mode is on
// and any input needs gradients, attaches parents and the backprop closure.
template <class S, class Backprop>
TensorT<S> make_op_result(Shape shape, std::vector<S> data,
                          std::initializer_list<TensorT<S>> inputs,
                          Backprop&& backprop) {
  auto out = TensorT<S>::from_data(std::move(shape), std::move(data));
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& in : inputs)
      if (in.defined() && in.requires_grad()) needs = true;
  if (needs) {
    auto n = out.node();
    n->requires_grad = true;
    for (const auto& in : inputs)
      if (in.defined()) n->parents.push_back(in.node());
    n->backprop = std::forward<Backprop>(backprop);
  }
  return out;
}

}  // namespace detail

}  // namespace gpic
