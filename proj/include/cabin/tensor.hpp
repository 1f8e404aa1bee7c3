#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cabin {

using Index = std::int64_t;
using Shape = std::vector<Index>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool enabled();

 private:
  bool previous_;
};

/// Dense row-major n-d array with optional participation in the reverse-mode
/// tape. Copies are shallow: two handles refer to the same node.
template <typename Scalar>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;  // empty until a backward pass reaches the node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;
  };

  Tensor();
  explicit Tensor(Shape shape, Scalar fill = Scalar(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

  static Tensor scalar(Scalar value, bool requires_grad = false);

  // Builds a result node. The graph link is only recorded when some parent
  // requires grad and no NoGradGuard is active.
  static Tensor from_op(Shape shape, std::vector<Scalar> values,
                        std::vector<Tensor> parents, std::function<void(Node&)> backward);

  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  Index numel() const { return static_cast<Index>(node_->data.size()); }

  std::span<Scalar> data() { return node_->data; }
  std::span<const Scalar> data() const { return node_->data; }
  Scalar item() const;
  Scalar operator[](Index i) const { return node_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool value);

  bool has_grad() const { return !node_->grad.empty(); }
  std::optional<std::span<const Scalar>> grad() const;
  std::span<Scalar> mutable_grad();
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  // New leaf holding a copy of the data, outside any graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  // Reverse-mode sweep from a scalar. Leaf grads accumulate across calls;
  // interior grads are recomputed each call.
  void backward();

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Accumulation buffer for a parent inside a backward closure, or nullptr when
// the parent does not need a gradient.
template <typename Scalar>
Scalar* grad_sink(typename Tensor<Scalar>::Node& node) {
  if (!node.requires_grad) return nullptr;
  if (node.grad.size() != node.data.size()) node.grad.assign(node.data.size(), Scalar(0));
  return node.grad.data();
}

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad = false) {
  std::vector<To> values(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(values), requires_grad);
}

}  // namespace cabin
