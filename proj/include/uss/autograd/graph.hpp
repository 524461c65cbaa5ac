#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "uss/core/error.hpp"
#include "uss/core/tensor.hpp"

namespace uss::ag {

// Named trainable tensor. Parameters are owned by model layers and shared
// read-only across concurrently evaluated graphs; gradients never live here.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

// One graph node: a value plus the recipe for pushing its gradient into the
// inputs. Each training example builds its own graph, so a graph is strictly
// single-writer; only Parameter values are shared between graphs.
template <typename T>
struct Node {
  const char* op = "leaf";
  Tensor<T> value;
  Tensor<T> grad;
  bool grad_live = false;
  bool needs_grad = false;
  Parameter<T>* param = nullptr;
  std::vector<Var<T>> inputs;
  std::function<void(Node<T>&)> backward_fn;

  void accumulate(const Tensor<T>& g) {
    if (!grad_live) {
      grad = g;
      grad_live = true;
    } else {
      T* d = grad.data();
      const T* s = g.data();
      for (int64_t i = 0; i < grad.size(); ++i) d[i] += s[i];
    }
  }
  void accumulate_at(int64_t i, T g) {
    if (!grad_live) {
      grad = Tensor<T>(value.shape());
      grad_live = true;
    }
    grad[i] += g;
  }
  // Ensures the grad buffer exists so backward fns can write in place.
  Tensor<T>& grad_buffer() {
    if (!grad_live) {
      grad = Tensor<T>(value.shape());
      grad_live = true;
    }
    return grad;
  }
};

template <typename T>
Var<T> constant(Tensor<T> v, const char* op = "const") {
  auto n = std::make_shared<Node<T>>();
  n->op = op;
  n->value = std::move(v);
  return n;
}

template <typename T>
Var<T> leaf(Parameter<T>& p) {
  auto n = std::make_shared<Node<T>>();
  n->op = "param";
  n->value = p.value;
  n->param = &p;
  n->needs_grad = true;
  return n;
}

template <typename T>
Var<T> make_node(const char* op, Tensor<T> value, std::vector<Var<T>> inputs,
                 std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->op = op;
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs)
    if (in->needs_grad) n->needs_grad = true;
  if (n->needs_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

template <typename T>
using GradMap = std::unordered_map<const Parameter<T>*, Tensor<T>>;

namespace detail {

// Post-order over the needs_grad subgraph, iterative to survive deep chains.
template <typename T>
std::vector<Node<T>*> topo_order(const Var<T>& root) {
  std::vector<Node<T>*> order;
  if (!root->needs_grad) return order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->needs_grad && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void diagnose_forward(const std::vector<Node<T>*>& order) {
  for (Node<T>* n : order)
    if (!n->value.all_finite())
      throw NumericError(n->op, "non-finite forward value");
}

}  // namespace detail

// Reverse-mode differentiation of a finite scalar. Returns the gradient map
// for every reachable parameter; non-parameter leaves are untouched. NaN/Inf
// anywhere triggers a NumericError naming the offending primitive.
template <typename T>
GradMap<T> backward(const Var<T>& loss) {
  check(loss->value.rank() == 0 || loss->value.size() == 1,
        "backward requires a scalar output, got shape " +
            shape_str(loss->value.shape()));
  auto order = detail::topo_order(loss);
  if (order.empty()) return {};
  if (!std::isfinite(static_cast<double>(loss->value[0])))
    detail::diagnose_forward(order);

  for (Node<T>* n : order) {
    n->grad = Tensor<T>();
    n->grad_live = false;
  }
  loss->accumulate(Tensor<T>::full(loss->value.shape(), T(1)));

  GradMap<T> grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->grad_live) continue;
    if (n->param) {
      auto [slot, inserted] = grads.try_emplace(n->param, n->grad);
      if (!inserted) {
        T* d = slot->second.data();
        const T* s = n->grad.data();
        for (int64_t i = 0; i < slot->second.size(); ++i) d[i] += s[i];
      }
    } else if (n->backward_fn) {
      n->backward_fn(*n);
    }
    if (!n->grad.all_finite()) {
      detail::diagnose_forward(order);  // prefer naming a forward culprit
      throw NumericError(n->op, "non-finite gradient");
    }
    n->grad = Tensor<T>();  // release transient buffers early
    n->grad_live = false;
  }
  return grads;
}

}  // namespace uss::ag
