#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "plane/core/error.hpp"
#include "plane/core/rng.hpp"

namespace plane::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first written
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // null for leaves

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Handle to a dense row-major float64 array that may sit in a
/// reverse-mode graph. Copies share storage.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false) : n_(std::make_shared<detail::Node>()) {
    if (data.size() != shape_numel(shape))
      throw Error("tensor data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    n_->shape = std::move(shape);
    n_->data = std::move(data);
    n_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({}, {v}, requires_grad); }

  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = stddev * rng.normal();
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor from_node(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::size_t ndim() const { return n_->shape.size(); }
  std::size_t numel() const { return n_->data.size(); }

  std::size_t dim(int axis) const { return n_->shape[normalize_axis(axis)]; }

  std::size_t normalize_axis(int axis) const {
    const int nd = static_cast<int>(ndim());
    const int a = axis < 0 ? axis + nd : axis;
    if (a < 0 || a >= nd) throw Error("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
    return static_cast<std::size_t>(a);
  }

  std::span<const double> data() const { return n_->data; }
  /// Writable storage; only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data() { return n_->data; }
  double item() const {
    if (numel() != 1) throw Error("item() on tensor of shape " + shape_str(shape()));
    return n_->data[0];
  }
  double operator[](std::size_t i) const { return n_->data[i]; }

  bool requires_grad() const { return n_->requires_grad; }
  bool is_leaf() const { return !n_->backward; }
  bool has_grad() const { return !n_->grad.empty(); }
  std::span<const double> grad() const { return n_->grad; }
  std::span<double> mutable_grad() { return n_->ensure_grad(); }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
  }

  /// Same values, no graph history.
  Tensor detach() const { return Tensor(shape(), n_->data, false); }

  const std::shared_ptr<detail::Node>& node() const { return n_; }

 private:
  std::shared_ptr<detail::Node> n_;
};

namespace detail {

/// Wraps a freshly computed result. The graph edge is kept only when grad
/// mode is on and some input requires grad.
inline Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!grad_mode()) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& t : inputs) n.parents.push_back(t.node());
  n.backward = std::move(backward);
  return out;
}

inline Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!grad_mode()) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& t : inputs) n.parents.push_back(t.node());
  n.backward = std::move(backward);
  return out;
}

}  // namespace detail

/// Accumulates d(loss)/d(t) into every reachable leaf with requires_grad.
/// Leaf gradients add up across calls until zeroed; tensors that do not
/// require grad are never given a gradient buffer.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw Error("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* n : order)
    if (n->backward) n->grad.assign(n->data.size(), 0.0);
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) {
      n->backward(*n);
      std::vector<double>().swap(n->grad);
    }
  }
}

}  // namespace plane::ad
