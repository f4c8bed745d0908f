#include "rhrseg/autograd.hpp"

#include <unordered_set>
#include <utility>

namespace rhrseg {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace {

template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS; graphs are deep enough to make recursion risky.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
  if (!root->requires_grad) return;
  if (!(seed.shape() == root->value.shape())) {
    throw ShapeError("backward seed shape " + seed.shape().str() +
                     " does not match root " + root->value.shape().str());
  }
  auto& g = root->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  auto order = topo_order(root.get());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
  }
  // Interior gradients are scratch; only leaves keep theirs.
  for (Node<T>* node : order) {
    if (node->backward_fn) node->zero_grad();
  }
}

template <typename T>
void backward(const Var<T>& root) {
  if (root->value.size() != 1) {
    throw ShapeError("backward() without a seed needs a scalar root, got " +
                     root->value.shape().str());
  }
  backward(root, Tensor<T>(root->value.shape(), T(1)));
}

template void backward(const Var<float>&);
template void backward(const Var<double>&);
template void backward(const Var<float>&, const Tensor<float>&);
template void backward(const Var<double>&, const Tensor<double>&);

}  // namespace rhrseg
