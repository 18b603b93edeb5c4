#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cardiofuse/tensor/ndarray.hpp"

namespace cardiofuse {

struct Node;

// Receives the output gradient and one accumulation buffer per input; a
// buffer is null when that input does not need a gradient.
using BackwardFn = std::function<void(const NdArray& grad_out, std::vector<NdArray*>& input_grads)>;

struct Node {
  NdArray value;
  NdArray grad;  // materialized on first accumulation
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  std::string op;
  bool requires_grad = false;

  bool is_leaf() const noexcept { return !backward; }
  NdArray& grad_buffer();
};

// Handle to a value in the differentiation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(NdArray value, bool requires_grad = false);

  static Var parameter(NdArray value) { return Var(std::move(value), true); }
  static Var constant(NdArray value) { return Var(std::move(value), false); }

  bool defined() const noexcept { return node_ != nullptr; }
  const NdArray& value() const { return node_->value; }
  // Mutable access for optimizers and finite-difference probes; never use on
  // a node that already feeds a recorded graph you still intend to backprop.
  NdArray& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  // Gradient, or zeros of the value's shape when none has been accumulated.
  NdArray grad() const;
  void zero_grad() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Var make_result(std::string op, NdArray value, const std::vector<Var>& inputs, BackwardFn backward);
};

// Creates the output node of an op. Fails with NumericError when the value is
// not finite. Records inputs and the backward rule only when gradient mode is
// on and at least one input requires a gradient.
Var make_result(std::string op, NdArray value, const std::vector<Var>& inputs, BackwardFn backward);

// Reverse-mode sweep from a scalar loss. Non-leaf gradients are reset at the
// start, so repeating the call on the same graph after zeroing leaf gradients
// reproduces identical leaf gradients.
void backward(const Var& loss);

bool grad_enabled() noexcept;

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace cardiofuse
