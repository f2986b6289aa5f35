#include "bopn/autodiff/tensor.hpp"

#include <unordered_set>
#include <utility>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace bopn::ad {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ",")); }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value.assign(element_count(shape), T(0));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (values.size() != element_count(shape))
    throw ShapeError(fmt::format("tensor: {} values for shape {}", values.size(),
                                 to_string(shape)));
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1)
    throw ShapeError(fmt::format("item: tensor of shape {} is not a scalar", to_string(shape())));
  return node_->value[0];
}

namespace {

// Post-order DFS without recursion; deep LSTM chains would overflow the stack.
template <typename T>
std::vector<Node<T>*> topological_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw ShapeError(
        fmt::format("backward: loss must be a scalar, got shape {}", to_string(loss.shape())));
  if (!loss.requires_grad()) return;
  auto order = topological_order(loss.node().get());
  for (auto* node : order)
    if (node->backward) node->grad.assign(node->value.size(), T(0));
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

template <typename T>
std::size_t graph_size(const Tensor<T>& root) {
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.node().get()};
  while (!stack.empty()) {
    auto* node = stack.back();
    stack.pop_back();
    if (!seen.insert(node).second) continue;
    for (const auto& input : node->inputs) stack.push_back(input.get());
  }
  return seen.size();
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template std::size_t graph_size<float>(const Tensor<float>&);
template std::size_t graph_size<double>(const Tensor<double>&);

}  // namespace bopn::ad
