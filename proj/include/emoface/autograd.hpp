// SPDX-License-Identifier: Apache-2.0
// Reverse-mode automatic differentiation over Tensor values.
//
// Backward functions are written in terms of other Var operations, so a
// gradient computed with create_graph = true is itself differentiable. This
// is what the gradient penalty needs: d/dθ ‖∇_x D_θ(x)‖. Ops whose backward
// is a fused first-order kernel are flagged and refuse double backward.
#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "emoface/tensor.hpp"

namespace emoface {

struct Node;

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const;
  Tensor& value_mut();
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

  /// Accumulated gradient of a leaf; empty until the first backward pass.
  const Tensor& grad() const;
  Tensor& grad_mut();
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// (op output, gradient of the output) -> one gradient per input; an
/// undefined Var means "no contribution".
using BackwardFn = std::function<std::vector<Var>(const Var& out, const Var& grad_out)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  bool twice_differentiable = true;
  const char* op = "leaf";
  std::vector<Var> inputs;
  BackwardFn backward;
  Tensor grad;
};

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

/// Builds an op node. Inputs and the backward closure are kept only when
/// grad mode is on and some input requires grad.
Var make_op(Tensor value, const char* op, std::vector<Var> inputs, BackwardFn backward,
            bool twice_differentiable = true);

/// Accumulates d(root)/d(leaf) into every reachable leaf's grad(). The graph
/// under root is released as it is walked, so it can be differentiated once.
void backward(const Var& root);

/// As above, restricted to the given leaves; branches that cannot reach
/// them are not visited.
void backward(const Var& root, std::span<const Var> leaves);

/// Returns d(root)/d(wrt[i]) without touching grad(). With create_graph the
/// results are differentiable Vars connected to the original graph.
std::vector<Var> grad(const Var& root, std::span<const Var> wrt, bool create_graph);

}  // namespace emoface
