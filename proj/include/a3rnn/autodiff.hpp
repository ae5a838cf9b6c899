#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "a3rnn/tensor.hpp"

// Reverse-mode automatic differentiation over dynamically built graphs.
//
// Every differentiable operation returns a Var whose node remembers its inputs
// and a closure that pushes the node's gradient into them. backward() walks the
// reachable subgraph in reverse creation order, which is a valid topological
// order because a node is always created after its inputs.

namespace a3rnn::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  std::uint64_t id = 0;

  /// Gradient buffer, allocated (zeroed) on first use.
  Tensor& grad_buffer();
  bool has_grad() const { return !grad.empty(); }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// Direct write access; only meaningful for leaves (parameters, inputs).
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Accumulated gradient; an all-zero tensor of matching shape if none arrived.
  Tensor grad() const;
  void zero_grad();

  const NodePtr& node() const { return node_; }

 private:
  friend Var make_node(Tensor, std::vector<Var>, std::function<void(Node&)>);
  NodePtr node_;
};

/// Wraps `value` in a node depending on `inputs`. The closure is retained only
/// when gradients are enabled and some input requires them.
Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

/// Seeds d(root)/d(root) = 1 and backpropagates. The graph below `root` is
/// released afterwards; leaf gradients accumulate across calls.
void backward(const Var& root);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Adds `delta` into the gradient of input `i` if that input tracks gradients.
void accumulate(Node& node, std::size_t i, const Tensor& delta);
/// Pointer to the gradient storage of input `i`, or nullptr if not tracked.
double* input_grad(Node& node, std::size_t i);

}  // namespace a3rnn::ad
