#include "wdgda/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace wdgda {

namespace {

using NodePtr = std::shared_ptr<Node>;

// Post-order over the part of the graph that carries gradients, so every
// node appears after all of its inputs.
std::vector<NodePtr> topological_order(const NodePtr& root) {
  std::vector<NodePtr> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const auto& child = node->inputs[next++];
      if (child.defined() && child.requires_grad() && !visited.count(child.node_ptr().get())) {
        visited.insert(child.node_ptr().get());
        stack.emplace_back(child.node_ptr(), 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

// Nodes from which at least one target is reachable (targets included).
std::unordered_set<const Node*> relevant_nodes(const std::vector<NodePtr>& order,
                                               const std::unordered_set<const Node*>& targets) {
  std::unordered_set<const Node*> relevant;
  for (const auto& node : order) {
    bool hit = targets.count(node.get()) > 0;
    for (const auto& in : node->inputs) {
      if (in.defined() && relevant.count(in.node_ptr().get())) hit = true;
    }
    if (hit) relevant.insert(node.get());
  }
  return relevant;
}

std::unordered_map<const Node*, Tensor> sweep(const Tensor& root, bool create_graph,
                                              const std::unordered_set<const Node*>* targets) {
  std::unordered_map<const Node*, Tensor> grads;
  if (!root.requires_grad()) return grads;
  if (root.numel() != 1) {
    throw GraphError("backward needs a scalar loss, got shape " + to_string(root.shape()));
  }
  if (root.node().freed) {
    throw GraphError("graph already freed at op '" + root.op() + "'");
  }

  const auto order = topological_order(root.node_ptr());
  std::unordered_set<const Node*> relevant;
  if (targets) relevant = relevant_nodes(order, *targets);

  grads[root.node_ptr().get()] = Tensor::full(root.shape(), 1.0, root.dtype());

  GradMode mode(create_graph);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& node = *it;
    auto found = grads.find(node.get());
    if (found == grads.end()) continue;
    if (node->freed) {
      throw GraphError("graph already freed at op '" + node->op +
                       "'; backward over it needs retain_secondary");
    }
    if (!node->backward) continue;  // leaf
    if (targets && !relevant.count(node.get())) continue;
    if (create_graph && !node->second_order) {
      throw UnsupportedOpError("op '" + node->op +
                               "' is not certified for double backward (second-order "
                               "differentiation)");
    }
    const Tensor upstream = found->second;
    const auto input_grads = node->backward(upstream, Tensor(node));
    for (std::size_t i = 0; i < node->inputs.size() && i < input_grads.size(); ++i) {
      const auto& in = node->inputs[i];
      const auto& g = input_grads[i];
      if (!in.defined() || !in.requires_grad() || !g.defined()) continue;
      if (g.shape() != in.shape()) {
        throw InvariantError("op '" + node->op + "' produced gradient " + to_string(g.shape()) +
                             " for input " + to_string(in.shape()));
      }
      auto& slot = grads[in.node_ptr().get()];
      slot = slot.defined() ? add(slot, g) : g;
    }
    // Interior gradients are not needed once propagated.
    if (!targets || !targets->count(node.get())) grads.erase(node.get());
  }

  if (!create_graph) {
    for (const auto& node : order) {
      if (node->backward) {
        node->backward = nullptr;
        node->inputs.clear();
        node->freed = true;
      }
    }
  }
  return grads;
}

}  // namespace

GradientMap backward(const Tensor& loss, bool retain_secondary) {
  auto grads = sweep(loss, retain_secondary, nullptr);
  GradientMap out;
  for (auto& [node, g] : grads) {
    auto* leaf = const_cast<Node*>(node);
    if (leaf->backward || leaf->freed) continue;
    leaf->grad = std::make_shared<std::vector<double>>(g.to_vector());
    out.emplace(leaf->id, g);
  }
  return out;
}

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph) {
  std::unordered_set<const Node*> targets;
  for (const auto& in : inputs) {
    if (in.defined()) targets.insert(in.node_ptr().get());
  }
  auto grads = sweep(output, create_graph, &targets);
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = in.defined() ? grads.find(in.node_ptr().get()) : grads.end();
    out.push_back(it == grads.end() ? Tensor{} : it->second);
  }
  return out;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                         double eps) {
  auto x = point.clone_leaf(true);
  auto analytic_t = grad(f(x), {x}).front();
  std::vector<double> analytic =
      analytic_t.defined() ? analytic_t.to_vector() : std::vector<double>(x.numel(), 0.0);

  // Evaluations keep recording enabled: `f` may itself differentiate.
  auto base = point.to_vector();
  double worst = 0.0;
  auto error_at = [&](std::size_t i, double h) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::from_data(point.shape(), plus, point.dtype())).item();
    const double fm = f(Tensor::from_data(point.shape(), minus, point.dtype())).item();
    const double numeric = (fp - fm) / (2.0 * h);
    return std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i]));
  };
  for (std::size_t i = 0; i < base.size(); ++i) {
    // A relu/abs kink inside [x-h, x+h] spoils the difference quotient but
    // not a shorter one; a wrong analytic gradient is wrong at every step.
    double err = error_at(i, eps);
    for (double h = eps / 10; err > 1e-9 && h >= eps / 100; h /= 10) err = std::min(err, error_at(i, h));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace wdgda
