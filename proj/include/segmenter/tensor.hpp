#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to shared storage. Data is immutable once an op
// has produced it; only leaves (parameters and inputs) may be written in place,
// and only gradient buffers change during backward(). Ops record a node on
// their output when grad mode is enabled and any input requires a gradient;
// backward() walks those nodes in reverse topological order.
//
// Instantiated for float (training and inference) and double (gradient-check
// oracles).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace segmenter {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
struct GradNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Reads out.grad and accumulates into the inputs' grad buffers.
  std::function<void(TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until allocated
  bool requires_grad = false;
  bool released = false;  // graph freed by a previous backward()
  std::shared_ptr<GradNode<T>> node;

  std::span<T> grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Thread-local switch: while disabled, ops never record graph nodes.
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

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from_data(Shape shape, std::vector<T> data);
  static Tensor scalar(T value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const& { return impl_->data; }
  // The span would outlive a temporary's storage.
  std::span<const T> data() const&& = delete;
  // Leaves only; throws ContractError for op outputs.
  std::span<T> mutable_data();
  T item() const;
  T at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return impl_->node == nullptr; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  std::span<const T> grad() const& { return impl_->grad; }
  std::span<const T> grad() const&& = delete;
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  // Allocates (if needed) and zero-fills the gradient buffer.
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); }

  // Reverse-mode accumulation from a scalar. Leaf gradients accumulate (+=).
  // Unless retain_graph is set, the recorded graph is freed afterwards and a
  // second call on the same result throws ContractError.
  void backward(bool retain_graph = false) const;

  // New leaf with a copy of the data, detached from any graph.
  Tensor detach() const;
  // Like detach() but keeps requires_grad.
  Tensor clone() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(impl_->data.begin(), impl_->data.end());
    return Tensor<U>::from_data(impl_->shape, std::move(out));
  }

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

// ---- ops -----------------------------------------------------------------
// Shapes are explicit; there is no implicit broadcasting apart from scale().

// a[m x k] * b[k x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a[m x k] * b[n x k]^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
// x[n x in] * w[out x in]^T + bias[out]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);

// Max-subtracted softmax along `axis`. NaN inputs propagate to NaN outputs.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
// Normalizes over the last axis, then applies gain and bias (both [last dim]).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// x / max(||x||_2, eps) along `axis`.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, std::size_t axis, T eps = T(1e-12));

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
struct CrossEntropy {
  Tensor<T> loss;  // scalar
  std::size_t counted = 0;
  bool all_ignored = false;  // loss is defined as 0 in that case
};

// logits [n x K], labels [n] in [0, K) or ignore_index. Mean over counted rows.
template <typename T>
CrossEntropy<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                              int ignore_index = 255);

// x[h x w x c] resampled to [out_h x out_w x c] with half-pixel centers
// (align_corners = false); source coordinates are clamped at the border.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  return bilinear_resize(x, out_h, out_w);
}

// out.flat[i] = x.flat[index[i]]; backward scatter-adds. Covers permutations,
// patch extraction and crops.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::vector<std::size_t> index, Shape shape);

// Reverses the second axis of an [h x w x c] tensor.
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x);

}  // namespace segmenter
