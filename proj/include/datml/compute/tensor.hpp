#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "datml/compute/scalar.hpp"

namespace datml::inline DATML_ABI {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

/// One vertex of the reverse-mode graph. Leaves have no parents and no
/// backward function; their gradient buffers persist across backward calls.
struct Node {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until first written
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::span<Scalar> ensure_grad();
};

}  // namespace detail

/// Handle to a dense row-major array that may take part in a computation
/// graph. Copying a Tensor aliases the same storage; use clone() for a copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Scalar> values, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  static Tensor vector(std::vector<Scalar> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const { return data().size(); }

  std::span<const Scalar> data() const;
  std::span<Scalar> mutable_data();
  Scalar item() const;
  Scalar at(std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const Scalar> grad() const;
  std::span<Scalar> mutable_grad();
  /// Allocates (if needed) and zeroes the gradient buffer.
  void zero_grad();
  void clear_grad();

  /// Deep copy of the values as a new leaf.
  Tensor clone() const;
  /// New leaf that shares nothing with the graph; never requires grad.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; interior gradients are recomputed each time.
void backward(const Tensor& loss);

}  // namespace datml::inline DATML_ABI
