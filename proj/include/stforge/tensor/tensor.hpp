#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace stforge {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? ", " : "") << shape[i];
  }
  out << ')';
  return out.str();
}

inline void validate_shape(const Shape& shape) {
  if (shape.empty()) {
    throw ShapeError("tensor shape must have rank >= 1");
  }
  for (Index extent : shape) {
    if (extent <= 0) {
      throw ShapeError("tensor shape " + shape_str(shape) + " has a non-positive extent");
    }
  }
}

/// Thread-local switch for graph recording. Inference runs under NoGradGuard so
/// no backward closures are captured.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct TensorNode {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  bool backward_ran = false;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) {
      grad.assign(data.size(), Scalar(0));
    }
  }
};

enum class RepeatBackward {
  kReject,      ///< a second backward() from the same root throws
  kRezero,      ///< leaf grads are zeroed before propagating again
  kAccumulate,  ///< leaf grads keep summing across calls
};

/// Dense row-major tensor handle. Copies share the underlying node (and
/// therefore its graph position); use clone() for an independent value.
template <typename Scalar>
class Tensor {
 public:
  using Node = TensorNode<Scalar>;
  using Map = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    validate_shape(shape);
    auto node = std::make_shared<Node>();
    node->data.assign(static_cast<std::size_t>(shape_numel(shape)), Scalar(0));
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    if (requires_grad) {
      node->ensure_grad();
    }
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, Scalar value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<Scalar> values, bool requires_grad = false) {
    validate_shape(shape);
    if (static_cast<Index>(values.size()) != shape_numel(shape)) {
      throw ShapeError("tensor shape " + shape_str(shape) + " needs " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) {
      node->ensure_grad();
    }
    return Tensor(std::move(node));
  }

  static Tensor matrix(const RowMatrix<Scalar>& m, bool requires_grad = false) {
    std::vector<Scalar> values(m.data(), m.data() + m.size());
    return from({m.rows(), m.cols()}, std::move(values), requires_grad);
  }

  static Tensor scalar(Scalar value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  Index rank() const { return static_cast<Index>(node().shape.size()); }
  Index dim(Index axis) const {
    if (axis < 0 || axis >= rank()) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                       shape_str(shape()));
    }
    return node().shape[static_cast<std::size_t>(axis)];
  }
  Index numel() const { return static_cast<Index>(node().data.size()); }
  bool requires_grad() const { return node().requires_grad; }
  bool is_leaf() const { return node().is_leaf; }

  std::span<Scalar> data() { return node().data; }
  std::span<const Scalar> data() const { return node().data; }
  std::span<Scalar> grad() {
    node().ensure_grad();
    return node().grad;
  }
  std::span<const Scalar> grad() const {
    node().ensure_grad();
    return node().grad;
  }
  bool has_grad() const { return node().grad.size() == node().data.size(); }

  Scalar item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return node().data[0];
  }
  Scalar operator[](Index flat) const { return node().data[static_cast<std::size_t>(flat)]; }
  Scalar at(Index row, Index col) const {
    return node().data[static_cast<std::size_t>(row * dim(1) + col)];
  }

  /// Row-major matrix view of a rank-2 tensor (rank-1 viewed as a row).
  ConstMap mat() const {
    const auto [rows, cols] = matrix_extents();
    return ConstMap(node().data.data(), rows, cols);
  }
  Map mat() {
    const auto [rows, cols] = matrix_extents();
    return Map(node().data.data(), rows, cols);
  }
  ConstMap grad_mat() const {
    const auto [rows, cols] = matrix_extents();
    node().ensure_grad();
    return ConstMap(node().grad.data(), rows, cols);
  }

  void set_requires_grad(bool on) {
    node().requires_grad = on;
    if (on) {
      node().ensure_grad();
    }
  }

  void zero_grad() {
    if (!node().grad.empty()) {
      std::fill(node().grad.begin(), node().grad.end(), Scalar(0));
    }
  }

  /// Independent leaf with a copy of the values.
  Tensor clone(bool requires_grad = false) const {
    return from(shape(), node().data, requires_grad);
  }
  Tensor detach() const { return clone(false); }

  template <typename Other>
  Tensor<Other> cast(bool requires_grad = false) const {
    std::vector<Other> values(node().data.begin(), node().data.end());
    return Tensor<Other>::from(shape(), std::move(values), requires_grad);
  }

  std::shared_ptr<Node> node_ptr() const { return node_; }
  Node& node() const {
    if (!node_) {
      throw std::logic_error("use of an undefined tensor");
    }
    return *node_;
  }

 private:
  std::pair<Index, Index> matrix_extents() const {
    if (rank() == 1) {
      return {1, dim(0)};
    }
    if (rank() == 2) {
      return {dim(0), dim(1)};
    }
    throw ShapeError("matrix view needs rank <= 2, got shape " + shape_str(shape()));
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

/// Allocates an op result; records inputs and the backward closure only when
/// some input needs a gradient and recording is enabled.
template <typename Scalar, typename Backward>
Tensor<Scalar> make_result(Shape shape, std::vector<Scalar> values,
                           std::initializer_list<Tensor<Scalar>> inputs, Backward&& backward) {
  auto node = std::make_shared<TensorNode<Scalar>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->is_leaf = false;
  bool needs_grad = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) {
      needs_grad = needs_grad || in.requires_grad();
    }
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const auto& in : inputs) {
      node->inputs.push_back(in.node_ptr());
    }
    node->backward_fn = std::forward<Backward>(backward);
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar, typename Backward>
Tensor<Scalar> make_result_n(Shape shape, std::vector<Scalar> values,
                             const std::vector<Tensor<Scalar>>& inputs, Backward&& backward) {
  auto node = std::make_shared<TensorNode<Scalar>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->is_leaf = false;
  bool needs_grad = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) {
      needs_grad = needs_grad || in.requires_grad();
    }
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const auto& in : inputs) {
      node->inputs.push_back(in.node_ptr());
    }
    node->backward_fn = std::forward<Backward>(backward);
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
std::vector<TensorNode<Scalar>*> topological_order(TensorNode<Scalar>* root) {
  std::vector<TensorNode<Scalar>*> order;
  std::unordered_set<TensorNode<Scalar>*> visited;
  std::vector<std::pair<TensorNode<Scalar>*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorNode<Scalar>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // inputs before consumers
}

}  // namespace detail

/// Reverse-mode sweep from a scalar root. Contributions from a tensor used
/// several times are summed; leaf grads accumulate across calls unless reset.
template <typename Scalar>
void backward(Tensor<Scalar>& loss, RepeatBackward repeat = RepeatBackward::kReject) {
  auto& root = loss.node();
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar root, got shape " + shape_str(loss.shape()));
  }
  if (!root.requires_grad) {
    throw std::invalid_argument("backward() root does not depend on any trainable tensor");
  }
  if (root.backward_ran && repeat == RepeatBackward::kReject) {
    throw std::logic_error(
        "backward() already ran from this root; zero the grads or pass RepeatBackward::kRezero");
  }
  const auto order = detail::topological_order(&root);
  for (auto* node : order) {
    if (!node->is_leaf) {
      node->grad.assign(node->data.size(), Scalar(0));
    } else if (repeat == RepeatBackward::kRezero && root.backward_ran) {
      node->grad.assign(node->data.size(), Scalar(0));
    } else {
      node->ensure_grad();
    }
  }
  root.grad[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) {
      (*it)->backward_fn(**it);
    }
  }
  root.backward_ran = true;
}

}  // namespace stforge
