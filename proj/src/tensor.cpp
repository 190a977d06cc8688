#include "segmenter/tensor.hpp"

#include <unordered_set>
#include <utility>

#include "segmenter/error.hpp"

namespace segmenter {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  auto impl = std::make_shared<Impl>();
  impl->data.assign(segmenter::numel(shape), value);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data) {
  if (segmenter::numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(segmenter::numel(shape)) +
                         " elements, got " + std::to_string(data.size()));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from_data({}, {value});
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (impl_->node) throw ContractError("mutable_data() on a non-leaf tensor");
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (impl_->data.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(impl_->shape));
  }
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (impl_->node && !on) throw ContractError("cannot clear requires_grad on a non-leaf tensor");
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl_->grad.assign(impl_->data.size(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(impl_->shape, impl_->data);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out = detach();
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

template <typename T>
void Tensor<T>::backward(bool retain_graph) const {
  if (impl_->data.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(impl_->shape));
  }
  if (impl_->released) {
    throw ContractError("backward() called twice on a freed graph; pass retain_graph = true");
  }
  if (!impl_->node) {
    if (impl_->requires_grad) impl_->grad_buffer()[0] += T(1);
    return;
  }

  // Iterative post-order DFS: `order` ends with the root.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited;
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->node && next < node->node->inputs.size()) {
      Impl* child = node->node->inputs[next++].get();
      if (child->released) {
        throw ContractError("graph reaches a tensor whose graph was freed by an earlier backward()");
      }
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (Impl* n : order) {
    if (n->node) n->grad.assign(n->data.size(), T(0));
  }
  impl_->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* n = *it;
    if (n->node) n->node->backward(*n);
  }
  for (Impl* n : order) {
    if (!n->node) continue;
    n->grad.clear();
    n->grad.shrink_to_fit();
    if (!retain_graph) {
      n->node.reset();
      n->released = true;
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace segmenter
