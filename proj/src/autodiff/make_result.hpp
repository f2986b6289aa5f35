#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "bopn/autodiff/tensor.hpp"

namespace bopn::ad::detail {

/// Wraps a kernel's forward value in a new node. The node joins the graph
/// (inputs + backward rule) only when some input requires a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::span<const Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_rule) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<T>& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward_rule);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_rule) {
  return make_result<T>(op, std::move(shape), std::move(value),
                        std::span<const Tensor<T>>(inputs.begin(), inputs.size()),
                        std::move(backward_rule));
}

}  // namespace bopn::ad::detail
