// SPDX-License-Identifier: Apache-2.0
#include "emoface/autograd.hpp"

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "emoface/ops.hpp"
#include "emoface/simd/kernels.hpp"

namespace emoface {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw std::logic_error("autograd: access to undefined Var");
  return node_->value;
}

Tensor& Var::value_mut() {
  if (!node_) throw std::logic_error("autograd: access to undefined Var");
  return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

const Tensor& Var::grad() const { return node_->grad; }
Tensor& Var::grad_mut() { return node_->grad; }
void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
  ~GradModeGuard() { g_grad_enabled = previous_; }

 private:
  bool previous_;
};

}  // namespace

Var make_op(Tensor value, const char* op, std::vector<Var> inputs, BackwardFn backward,
            bool twice_differentiable) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->twice_differentiable = twice_differentiable;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

namespace {

// Post-order over nodes that require grad: inputs precede consumers.
std::vector<std::shared_ptr<Node>> topo_order(const Var& root) {
  std::vector<std::shared_ptr<Node>> order;
  if (!root.requires_grad()) return order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(root.node_ptr(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Var& in = node->inputs[next++];
      if (in.requires_grad() && seen.insert(in.node()).second) stack.emplace_back(in.node_ptr(), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

struct BackwardRequest {
  const Var* root = nullptr;
  Var seed;
  std::unordered_set<Node*> targets;  // empty: every leaf
  bool accumulate_leaves = true;
  bool create_graph = false;
};

std::unordered_map<Node*, Var> run_backward(const BackwardRequest& req) {
  std::unordered_map<Node*, Var> results;
  auto order = topo_order(*req.root);
  if (order.empty()) return results;

  std::unordered_set<Node*> useful;
  for (const auto& node : order) {
    bool u = req.targets.empty() ? true : req.targets.count(node.get()) > 0;
    for (const auto& in : node->inputs) u = u || useful.count(in.node()) > 0;
    if (u) useful.insert(node.get());
  }

  std::unordered_map<Node*, Var> grads;
  grads[req.root->node()] = req.seed;
  GradModeGuard mode(req.create_graph);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->get();
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    Var g = std::move(found->second);
    grads.erase(found);
    if (!useful.count(node)) continue;
    // backward() consumes the graph: once a node has passed its
    // gradient on, its saved inputs and closure are dropped.
    const bool release = req.accumulate_leaves && !req.create_graph;

    if (req.targets.count(node)) results[node] = g;

    if (!node->backward) {
      if (req.accumulate_leaves && (req.targets.empty() || req.targets.count(node))) {
        const Tensor& gv = g.value();
        if (node->grad.empty()) {
          node->grad = gv;
        } else {
          simd::kernels().add(gv.size(), node->grad.ptr(), gv.ptr(), node->grad.ptr());
        }
      }
      if (release) it->reset();
      continue;
    }
    if (req.create_graph && !node->twice_differentiable)
      throw std::logic_error(std::string("autograd: op '") + node->op +
                             "' does not support double backward");

    std::vector<Var> in_grads = node->backward(Var(*it), g);
    for (std::size_t i = 0; i < node->inputs.size() && i < in_grads.size(); ++i) {
      const Var& in = node->inputs[i];
      Var& gi = in_grads[i];
      if (!gi.defined() || !in.requires_grad() || !useful.count(in.node())) continue;
      if (gi.shape() != in.shape())
        throw std::logic_error(std::string("autograd: op '") + node->op + "' produced gradient " +
                               shape_str(gi.shape()) + " for input " + shape_str(in.shape()));
      auto slot = grads.find(in.node());
      if (slot == grads.end()) {
        grads.emplace(in.node(), std::move(gi));
      } else {
        slot->second = ops::add(slot->second, gi);
      }
    }
    if (release) {
      node->backward = nullptr;
      node->inputs.clear();
      it->reset();
    }
  }
  return results;
}

Var ones_like_scalar(const Var& root) {
  if (root.size() != 1)
    throw std::invalid_argument("autograd: backward root must have one element, got " +
                                shape_str(root.shape()));
  return Var(Tensor(root.shape(), 1.0));
}

}  // namespace

void backward(const Var& root) {
  BackwardRequest req;
  req.root = &root;
  req.seed = ones_like_scalar(root);
  run_backward(req);
}

void backward(const Var& root, std::span<const Var> leaves) {
  BackwardRequest req;
  req.root = &root;
  req.seed = ones_like_scalar(root);
  for (const auto& l : leaves) {
    if (l.requires_grad()) req.targets.insert(l.node());
  }
  if (req.targets.empty()) return;
  run_backward(req);
}

std::vector<Var> grad(const Var& root, std::span<const Var> wrt, bool create_graph) {
  BackwardRequest req;
  req.root = &root;
  req.seed = ones_like_scalar(root);
  req.accumulate_leaves = false;
  req.create_graph = create_graph;
  for (const auto& w : wrt) {
    if (w.requires_grad()) req.targets.insert(w.node());
  }
  std::vector<Var> out;
  out.reserve(wrt.size());
  if (req.targets.empty()) {
    for (const auto& w : wrt) out.emplace_back(Tensor(w.shape(), 0.0));
    return out;
  }
  auto results = run_backward(req);
  for (const auto& w : wrt) {
    auto it = results.find(w.node());
    out.push_back(it != results.end() ? it->second : Var(Tensor(w.shape(), 0.0)));
  }
  return out;
}

}  // namespace emoface
