#include "cardiofuse/tensor/autodiff.hpp"

#include <stdexcept>
#include <unordered_set>
#include <utility>

#include "cardiofuse/error.hpp"

namespace cardiofuse {

namespace {
thread_local int no_grad_depth = 0;
}

bool grad_enabled() noexcept { return no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

NdArray& Node::grad_buffer() {
  if (grad.empty()) grad = NdArray(value.shape(), 0.0);
  return grad;
}

Var::Var(NdArray value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->op = requires_grad ? "parameter" : "constant";
}

NdArray Var::grad() const {
  if (!node_) throw std::logic_error("Var::grad on undefined Var");
  if (node_->grad.empty()) return NdArray(node_->value.shape(), 0.0);
  return node_->grad;
}

void Var::zero_grad() const {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

Var make_result(std::string op, NdArray value, const std::vector<Var>& inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(op + ": produced a non-finite value");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = std::move(op);
  bool needs = false;
  if (grad_enabled())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

namespace {

// Post-order over nodes that require gradients, iteratively.
std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Var& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.value().size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  const auto order = topological_order(root);
  for (Node* n : order)
    if (!n->is_leaf()) n->grad = NdArray(n->value.shape(), 0.0);
  root->grad_buffer().fill(1.0);

  std::vector<NdArray*> input_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf()) continue;
    input_grads.assign(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i)
      if (n->inputs[i]->requires_grad) input_grads[i] = &n->inputs[i]->grad_buffer();
    n->backward(n->grad, input_grads);
  }
  for (Node* n : order)
    if (n->is_leaf() && !n->grad.all_finite()) throw NumericError("backward: non-finite gradient reached a leaf");
}

}  // namespace cardiofuse
