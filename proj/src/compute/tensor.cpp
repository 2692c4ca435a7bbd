#include "datml/compute/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "datml/error.hpp"

namespace datml::inline DATML_ABI {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace detail {

std::span<Scalar> Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), Scalar(0));
  return grad;
}

}  // namespace detail

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<Scalar> values,
                                        bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ContractViolation("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (values.size() != shape_numel(shape)) {
    throw ContractViolation("tensor data length " + std::to_string(values.size()) +
                            " does not match shape " + shape_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ContractViolation("use of an undefined tensor");
  return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return wrap(make_leaf(std::move(shape), std::vector<Scalar>(n, Scalar(0)), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  return wrap(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<Scalar> values, bool requires_grad) {
  const auto n = values.size();
  return from({n}, std::move(values), requires_grad);
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return checked(node_).shape; }
std::span<const Scalar> Tensor::data() const { return checked(node_).data; }
std::span<Scalar> Tensor::mutable_data() {
  checked(node_);
  return node_->data;
}

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractViolation("item() on tensor of shape " + shape_string(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }
void Tensor::set_requires_grad(bool on) {
  checked(node_);
  node_->requires_grad = on;
}

bool Tensor::has_grad() const {
  const auto& n = checked(node_);
  return !n.grad.empty() && n.grad.size() == n.data.size();
}

std::span<const Scalar> Tensor::grad() const {
  if (!has_grad()) throw ContractViolation("tensor has no gradient buffer");
  return node_->grad;
}

std::span<Scalar> Tensor::mutable_grad() {
  checked(node_);
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  auto g = mutable_grad();
  std::fill(g.begin(), g.end(), Scalar(0));
}

void Tensor::clear_grad() {
  checked(node_);
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  const auto& n = checked(node_);
  return wrap(make_leaf(n.shape, n.data, n.requires_grad));
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return wrap(make_leaf(n.shape, n.data, false));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractViolation("backward() on an undefined tensor");
  if (loss.numel() != 1) {
    throw ContractViolation("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; a grey node met again means a cycle.
  enum class Mark : unsigned char { kGrey, kBlack };
  std::unordered_map<detail::Node*, Mark> marks;
  std::vector<detail::Node*> order;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  detail::Node* root = loss.node().get();
  stack.emplace_back(root, 0);
  marks[root] = Mark::kGrey;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (!parent->requires_grad) continue;
      auto it = marks.find(parent);
      if (it == marks.end()) {
        marks.emplace(parent, Mark::kGrey);
        stack.emplace_back(parent, 0);
      } else if (it->second == Mark::kGrey) {
        throw ContractViolation("computation graph contains a cycle");
      }
    } else {
      marks[node] = Mark::kBlack;
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->is_leaf()) {
      auto g = node->ensure_grad();
      std::fill(g.begin(), g.end(), Scalar(0));
    }
  }
  root->ensure_grad()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

}  // namespace datml::inline DATML_ABI
