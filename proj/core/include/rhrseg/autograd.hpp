#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rhrseg/tensor.hpp"

namespace rhrseg {

// One value in the reverse-mode tape. Leaves are parameters or inputs;
// interior nodes hold the closure that pushes `grad` into their parents.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return !grad.empty(); }
  // Lazily allocates a zero gradient of the value's shape.
  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

// Thread-local switch; while a guard is alive no graph is recorded.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Wraps an op result. The closure and parents are kept only when recording
// is enabled and at least one parent needs a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (!grad_enabled()) return node;
  bool any = false;
  for (const auto& p : parents) any = any || (p && p->requires_grad);
  if (!any) return node;
  node->requires_grad = true;
  node->parents = std::move(parents);
  node->backward_fn = std::move(backward_fn);
  return node;
}

// Seeds the root (which must hold a single element) with 1 and runs every
// reachable closure in reverse topological order. Leaf gradients accumulate.
template <typename T>
void backward(const Var<T>& root);

// Same, with an explicit upstream gradient of the root's shape.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed);

extern template void backward(const Var<float>&);
extern template void backward(const Var<double>&);
extern template void backward(const Var<float>&, const Tensor<float>&);
extern template void backward(const Var<double>&, const Tensor<double>&);

}  // namespace rhrseg
