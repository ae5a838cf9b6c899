#include "a3rnn/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include "a3rnn/errors.hpp"

namespace a3rnn::ad {
namespace {

std::atomic<std::uint64_t> next_id{1};
thread_local bool grad_mode = true;

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->id = next_id.fetch_add(1, std::memory_order_relaxed);
}

Tensor Var::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

void Var::zero_grad() { node_->grad = Tensor(); }

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  Var out(std::move(value), false);
  if (!grad_mode) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.defined() && v.requires_grad(); });
  if (!needs) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (auto& v : inputs) out.node_->inputs.push_back(v.node());
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

void backward(const Var& root) {
  require(root.defined(), "backward on undefined variable");
  require(root.size() == 1, "backward root must be scalar, got " + shape_string(root.shape()));
  if (!root.requires_grad()) return;

  // Owning references keep every node alive until the release pass below has run.
  std::vector<NodePtr> order;
  std::vector<NodePtr> stack{root.node()};
  std::unordered_set<const Node*> seen{root.node().get()};
  while (!stack.empty()) {
    NodePtr n = std::move(stack.back());
    stack.pop_back();
    for (auto& in : n->inputs) {
      if (in && in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(),
            [](const NodePtr& a, const NodePtr& b) { return a->id > b->id; });

  root.node()->grad_buffer()[0] += 1.0;
  for (auto& n : order) {
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
  // Unlink the graph so that destroying `order` never recurses through long chains.
  for (auto& n : order) {
    if (!n->inputs.empty()) {
      n->backward_fn = nullptr;
      n->grad = Tensor();
      n->inputs.clear();
    }
  }
}

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

void accumulate(Node& node, std::size_t i, const Tensor& delta) {
  double* g = input_grad(node, i);
  if (!g) return;
  const double* d = delta.data();
  for (std::size_t k = 0; k < delta.size(); ++k) g[k] += d[k];
}

double* input_grad(Node& node, std::size_t i) {
  Node& in = *node.inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.grad_buffer().data();
}

}  // namespace a3rnn::ad
