#include "cabin/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace cabin {

namespace {
thread_local bool no_grad_active = false;
}

NoGradGuard::NoGradGuard() : previous_(no_grad_active) { no_grad_active = true; }
NoGradGuard::~NoGradGuard() { no_grad_active = previous_; }
bool NoGradGuard::enabled() { return no_grad_active; }

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor() : node_(std::make_shared<Node>()) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  const Index n = cabin::numel(shape);
  node_->shape = std::move(shape);
  node_->data.assign(static_cast<std::size_t>(n), fill);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (cabin::numel(shape) != static_cast<Index>(values.size()))
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<Scalar>{value}, requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_op(Shape shape, std::vector<Scalar> values,
                                       std::vector<Tensor> parents,
                                       std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  if (NoGradGuard::enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward);
  return out;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (node_->data.size() != 1)
    throw ShapeError("item() on tensor of shape " + to_string(node_->shape));
  return node_->data[0];
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool value) {
  node_->requires_grad = value;
  return *this;
}

template <typename Scalar>
std::optional<std::span<const Scalar>> Tensor<Scalar>::grad() const {
  if (node_->grad.empty()) return std::nullopt;
  return std::span<const Scalar>(node_->grad);
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::mutable_grad() {
  if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), Scalar(0));
  return node_->grad;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Scalar(0));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(node_->shape, node_->data);
}

template <typename Scalar>
void Tensor<Scalar>::backward() {
  if (node_->data.size() != 1)
    throw ShapeError("backward() requires a scalar loss, got " + to_string(node_->shape));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward)
      n->grad.assign(n->data.size(), Scalar(0));
    else if (n->grad.size() != n->data.size())
      n->grad.assign(n->data.size(), Scalar(0));
  }
  node_->grad[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace cabin
