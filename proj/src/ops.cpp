#include <algorithm>
#include <cmath>
#include <limits>

#include "segmenter/error.hpp"
#include "segmenter/kernels.hpp"
#include "segmenter/tensor.hpp"

namespace segmenter {
namespace {

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

template <typename T>
bool needs_grad(const ImplPtr<T>& p) {
  return p && p->requires_grad;
}

// Wraps freshly computed data into a tensor and, when any input requires a
// gradient, records the backward closure on it.
template <typename T, typename Backward>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<ImplPtr<T>> inputs,
                      const char* op, Backward&& backward) {
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || needs_grad(in);
  if (!any) return out;
  auto node = std::make_shared<detail::GradNode<T>>();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::forward<Backward>(backward);
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

void require(bool cond, const std::string& what) {
  if (!cond) throw DimensionError(what);
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  require(t.defined(), std::string(op) + ": undefined tensor");
  require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(t.shape()));
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  require(axis < shape.size(), std::string(op) + ": axis " + std::to_string(axis) +
                                   " out of range for " + shape_str(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  require(a.dim(1) == b.dim(0),
          "matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::active<T>().gemm(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(), n,
                            T(0), out.data(), n);
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>({m, n}, std::move(out), {ai, bi}, "matmul",
                        [ai, bi, m, n, k](detail::TensorImpl<T>& o) {
                          const auto& ks = kernels::active<T>();
                          if (ai->requires_grad) {
                            ks.gemm(false, true, m, k, n, T(1), o.grad.data(), n, bi->data.data(), n,
                                    T(1), ai->grad_buffer().data(), k);
                          }
                          if (bi->requires_grad) {
                            ks.gemm(true, false, k, n, m, T(1), ai->data.data(), k, o.grad.data(), n,
                                    T(1), bi->grad_buffer().data(), n);
                          }
                        });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  require(a.dim(1) == b.dim(1), "matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()) + "^T");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(m * n);
  kernels::active<T>().gemm(false, true, m, n, k, T(1), a.data().data(), k, b.data().data(), k,
                            T(0), out.data(), n);
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>({m, n}, std::move(out), {ai, bi}, "matmul_nt",
                        [ai, bi, m, n, k](detail::TensorImpl<T>& o) {
                          const auto& ks = kernels::active<T>();
                          if (ai->requires_grad) {
                            ks.gemm(false, false, m, k, n, T(1), o.grad.data(), n, bi->data.data(),
                                    k, T(1), ai->grad_buffer().data(), k);
                          }
                          if (bi->requires_grad) {
                            ks.gemm(true, false, n, k, m, T(1), o.grad.data(), n, ai->data.data(), k,
                                    T(1), bi->grad_buffer().data(), k);
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  require(x.dim(1) == w.dim(1), "linear: input " + shape_str(x.shape()) +
                                    " does not match weight " + shape_str(w.shape()));
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == out_dim,
            "linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                shape_str(w.shape()));
  }
  std::vector<T> out(rows * out_dim);
  kernels::active<T>().gemm(false, true, rows, out_dim, in, T(1), x.data().data(), in,
                            w.data().data(), in, T(0), out.data(), out_dim);
  if (bias.defined()) {
    const T* b = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      T* row = out.data() + r * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) row[j] += b[j];
    }
  }
  auto xi = x.impl(), wi = w.impl();
  ImplPtr<T> bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<ImplPtr<T>> inputs{xi, wi};
  if (bi) inputs.push_back(bi);
  return make_result<T>({rows, out_dim}, std::move(out), std::move(inputs), "linear",
                        [xi, wi, bi, rows, in, out_dim](detail::TensorImpl<T>& o) {
                          const auto& ks = kernels::active<T>();
                          if (xi->requires_grad) {
                            ks.gemm(false, false, rows, in, out_dim, T(1), o.grad.data(), out_dim,
                                    wi->data.data(), in, T(1), xi->grad_buffer().data(), in);
                          }
                          if (wi->requires_grad) {
                            ks.gemm(true, false, out_dim, in, rows, T(1), o.grad.data(), out_dim,
                                    xi->data.data(), in, T(1), wi->grad_buffer().data(), in);
                          }
                          if (bi && bi->requires_grad) {
                            auto gb = bi->grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r) {
                              ks.axpy(T(1), o.grad.data() + r * out_dim, gb.data(), out_dim);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.data().begin(), a.data().end());
  kernels::active<T>().axpy(T(1), b.data().data(), out.data(), out.size());
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(a.shape(), std::move(out), {ai, bi}, "add",
                        [ai, bi](detail::TensorImpl<T>& o) {
                          const auto& ks = kernels::active<T>();
                          if (ai->requires_grad) {
                            ks.axpy(T(1), o.grad.data(), ai->grad_buffer().data(), o.grad.size());
                          }
                          if (bi->requires_grad) {
                            ks.axpy(T(1), o.grad.data(), bi->grad_buffer().data(), o.grad.size());
                          }
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(a.shape(), std::move(out), {ai, bi}, "mul",
                        [ai, bi](detail::TensorImpl<T>& o) {
                          if (ai->requires_grad) {
                            auto g = ai->grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->data[i];
                          }
                          if (bi->requires_grad) {
                            auto g = bi->grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ai->data[i];
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v *= factor;
  auto ai = a.impl();
  return make_result<T>(a.shape(), std::move(out), {ai}, "scale",
                        [ai, factor](detail::TensorImpl<T>& o) {
                          kernels::active<T>().axpy(factor, o.grad.data(), ai->grad_buffer().data(),
                                                    o.grad.size());
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  const T* src = a.data().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  auto ai = a.impl();
  return make_result<T>({c, r}, std::move(out), {ai}, "transpose",
                        [ai, r, c](detail::TensorImpl<T>& o) {
                          auto g = ai->grad_buffer();
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(numel(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  auto ai = a.impl();
  return make_result<T>(std::move(shape), std::move(out), {ai}, "reshape",
                        [ai](detail::TensorImpl<T>& o) {
                          kernels::active<T>().axpy(T(1), o.grad.data(), ai->grad_buffer().data(),
                                                    o.grad.size());
                        });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  Shape shape = parts[0].shape();
  require(axis < shape.size(), "concat: axis out of range for " + shape_str(shape));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = shape;
    require(a.size() == b.size(), "concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[axis] = b[axis] = 0;
    require(a == b, "concat: shapes " + shape_str(p.shape()) + " and " + shape_str(shape) +
                        " differ off axis " + std::to_string(axis));
    total += p.dim(axis);
  }
  shape[axis] = total;
  const AxisSplit s = split_axis(shape, axis, "concat");
  std::vector<T> out(numel(shape));
  std::vector<ImplPtr<T>> inputs;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.dim(axis);
    const T* src = p.data().data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(src + o * ext * s.inner, ext * s.inner,
                  out.data() + (o * total + offset) * s.inner);
    }
    inputs.push_back(p.impl());
    offsets.push_back(offset);
    offset += ext;
  }
  auto captured = inputs;
  return make_result<T>(
      std::move(shape), std::move(out), std::move(inputs), "concat",
      [captured, offsets, axis, s, total](detail::TensorImpl<T>& o) {
        for (std::size_t idx = 0; idx < captured.size(); ++idx) {
          const auto& in = captured[idx];
          if (!in->requires_grad) continue;
          const std::size_t ext = in->shape[axis];
          auto g = in->grad_buffer();
          for (std::size_t b = 0; b < s.outer; ++b) {
            const T* src = o.grad.data() + (b * total + offsets[idx]) * s.inner;
            T* dst = g.data() + b * ext * s.inner;
            for (std::size_t i = 0; i < ext * s.inner; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_axis(a.shape(), axis, "slice");
  require(start + length <= s.extent, "slice: range [" + std::to_string(start) + ", " +
                                          std::to_string(start + length) + ") exceeds " +
                                          shape_str(a.shape()) + " on axis " + std::to_string(axis));
  Shape shape = a.shape();
  shape[axis] = length;
  std::vector<T> out(numel(shape));
  const T* src = a.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(src + (o * s.extent + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  }
  auto ai = a.impl();
  return make_result<T>(std::move(shape), std::move(out), {ai}, "slice",
                        [ai, s, start, length](detail::TensorImpl<T>& o) {
                          auto g = ai->grad_buffer();
                          for (std::size_t b = 0; b < s.outer; ++b) {
                            const T* src = o.grad.data() + b * length * s.inner;
                            T* dst = g.data() + (b * s.extent + start) * s.inner;
                            for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
                          }
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  std::vector<T> out(x.numel());
  const T* src = x.data().data();
  const auto& ks = kernels::active<T>();
  std::vector<T> lane(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      for (std::size_t k = 0; k < s.extent; ++k) lane[k] = src[base + k * s.inner];
      const T mx = ks.max(lane.data(), s.extent);
      T total = 0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        lane[k] = std::exp(lane[k] - mx);
        total += lane[k];
      }
      const T inv = T(1) / total;
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] = lane[k] * inv;
    }
  }
  auto xi = x.impl();
  auto result = make_result<T>(x.shape(), std::move(out), {xi}, "softmax", [](auto&) {});
  if (auto node = result.impl()->node) {
    // Backward needs the output values; hold them by value to avoid a cycle.
    std::vector<T> y(result.data().begin(), result.data().end());
    node->backward = [xi, s, y = std::move(y)](detail::TensorImpl<T>& o) {
      auto g = xi->grad_buffer();
      for (std::size_t b = 0; b < s.outer; ++b) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = b * s.extent * s.inner + in;
          T dotp = 0;
          for (std::size_t k = 0; k < s.extent; ++k) {
            const std::size_t i = base + k * s.inner;
            dotp += o.grad[i] * y[i];
          }
          for (std::size_t k = 0; k < s.extent; ++k) {
            const std::size_t i = base + k * s.inner;
            g[i] += y[i] * (o.grad[i] - dotp);
          }
        }
      }
    };
  }
  return result;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require(x.defined() && x.rank() >= 1, "layer_norm: input must have rank >= 1");
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  require(gain.numel() == d && bias.numel() == d,
          "layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
              " do not match last axis of " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel()), xhat(x.numel()), rstd(rows);
  const T* src = x.data().data();
  const T* gn = gain.data().data();
  const T* bs = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = src + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gn[j] + bs[j];
    }
  }
  auto xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  return make_result<T>(
      x.shape(), std::move(out), {xi, gi, bi}, "layer_norm",
      [xi, gi, bi, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](detail::TensorImpl<T>& o) {
        const T* go = o.grad.data();
        if (gi->requires_grad || bi->requires_grad) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gi->requires_grad) gi->grad_buffer()[j] += go[r * d + j] * xhat[r * d + j];
              if (bi->requires_grad) bi->grad_buffer()[j] += go[r * d + j];
            }
          }
        }
        if (!xi->requires_grad) return;
        auto gx = xi->grad_buffer();
        const T* gn = gi->data.data();
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh = 0, mean_dhh = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = go[r * d + j] * gn[j];
            mean_dh += dh;
            mean_dhh += dh * xhat[r * d + j];
          }
          mean_dh /= T(d);
          mean_dhh /= T(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = go[r * d + j] * gn[j];
            gx[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dhh);
          }
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T kA = T(0.044715);
  std::vector<T> out(x.numel());
  const T* src = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = src[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  auto xi = x.impl();
  return make_result<T>(x.shape(), std::move(out), {xi}, "gelu", [xi](detail::TensorImpl<T>& o) {
    auto g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xi->data[i];
      const T t = std::tanh(kC * (v + kA * v * v * v));
      const T dt = (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
      g[i] += o.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
    }
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, std::size_t axis, T eps) {
  const AxisSplit s = split_axis(x.shape(), axis, "l2_normalize");
  std::vector<T> out(x.numel());
  std::vector<T> denom(s.outer * s.inner);
  std::vector<char> clamped(s.outer * s.inner);
  const T* src = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T ss = 0;
      for (std::size_t k = 0; k < s.extent; ++k) ss += src[base + k * s.inner] * src[base + k * s.inner];
      const T norm = std::sqrt(ss);
      const std::size_t id = o * s.inner + in;
      clamped[id] = norm <= eps;
      denom[id] = clamped[id] ? eps : norm;
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] = src[base + k * s.inner] / denom[id];
    }
  }
  auto xi = x.impl();
  auto result = make_result<T>(x.shape(), std::move(out), {xi}, "l2_normalize", [](auto&) {});
  if (auto node = result.impl()->node) {
    std::vector<T> y(result.data().begin(), result.data().end());
    node->backward = [xi, s, y = std::move(y), denom = std::move(denom),
                      clamped = std::move(clamped)](detail::TensorImpl<T>& o) {
      auto g = xi->grad_buffer();
      for (std::size_t b = 0; b < s.outer; ++b) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t id = b * s.inner + in;
          const std::size_t base = b * s.extent * s.inner + in;
          T dotp = 0;
          if (!clamped[id]) {
            for (std::size_t k = 0; k < s.extent; ++k) {
              const std::size_t i = base + k * s.inner;
              dotp += o.grad[i] * y[i];
            }
          }
          for (std::size_t k = 0; k < s.extent; ++k) {
            const std::size_t i = base + k * s.inner;
            g[i] += (o.grad[i] - y[i] * dotp) / denom[id];
          }
        }
      }
    };
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const T total = x.numel() ? kernels::active<T>().sum(x.data().data(), x.numel()) : T(0);
  auto xi = x.impl();
  return make_result<T>({}, {total}, {xi}, "sum", [xi](detail::TensorImpl<T>& o) {
    auto g = xi->grad_buffer();
    for (T& v : g) v += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
CrossEntropy<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                              int ignore_index) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  require(labels.size() == n, "cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for logits " + shape_str(logits.shape()));
  std::size_t counted = 0;
  for (std::uint8_t l : labels) {
    if (int(l) == ignore_index) continue;
    if (l >= classes) {
      throw ContractError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
    ++counted;
  }
  CrossEntropy<T> result;
  result.counted = counted;
  result.all_ignored = counted == 0;
  const T* src = logits.data().data();
  const auto& ks = kernels::active<T>();
  // Row-wise softmax is kept for the backward pass.
  std::vector<T> probs(counted ? n * classes : 0);
  T total = 0;
  if (counted) {
    for (std::size_t r = 0; r < n; ++r) {
      const T* row = src + r * classes;
      const T mx = ks.max(row, classes);
      T z = 0;
      for (std::size_t k = 0; k < classes; ++k) {
        probs[r * classes + k] = std::exp(row[k] - mx);
        z += probs[r * classes + k];
      }
      for (std::size_t k = 0; k < classes; ++k) probs[r * classes + k] /= z;
      if (int(labels[r]) == ignore_index) continue;
      total += -(row[labels[r]] - mx - std::log(z));
    }
    total /= T(counted);
  }
  auto li = logits.impl();
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  result.loss = make_result<T>(
      {}, {total}, {li}, "cross_entropy",
      [li, probs = std::move(probs), lab = std::move(lab), n, classes, counted,
       ignore_index](detail::TensorImpl<T>& o) {
        if (!counted) return;
        auto g = li->grad_buffer();
        const T w = o.grad[0] / T(counted);
        for (std::size_t r = 0; r < n; ++r) {
          if (int(lab[r]) == ignore_index) continue;
          for (std::size_t k = 0; k < classes; ++k) {
            const T target = k == lab[r] ? T(1) : T(0);
            g[r * classes + k] += w * (probs[r * classes + k] - target);
          }
        }
      });
  return result;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = double(in) / double(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    std::size_t i0 = std::min<std::size_t>(std::size_t(src), in - 1);
    std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - double(i0)};
    if (i0 == i1) taps[o].w1 = 0;
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "bilinear_resize");
  require(out_h > 0 && out_w > 0, "bilinear_resize: zero target size " + std::to_string(out_h) +
                                      "x" + std::to_string(out_w));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  require(h > 0 && w > 0, "bilinear_resize: empty input " + shape_str(x.shape()));
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  std::vector<T> out(out_h * out_w * c);
  const T* src = x.data().data();
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const T wy1 = T(ty[oy].w1), wy0 = T(1) - wy1;
    const T* r0 = src + ty[oy].i0 * w * c;
    const T* r1 = src + ty[oy].i1 * w * c;
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const T wx1 = T(tx[ox].w1), wx0 = T(1) - wx1;
      const std::size_t x0 = tx[ox].i0 * c, x1 = tx[ox].i1 * c;
      T* dst = out.data() + (oy * out_w + ox) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        dst[ch] = wy0 * (wx0 * r0[x0 + ch] + wx1 * r0[x1 + ch]) +
                  wy1 * (wx0 * r1[x0 + ch] + wx1 * r1[x1 + ch]);
      }
    }
  }
  auto xi = x.impl();
  return make_result<T>(
      {out_h, out_w, c}, std::move(out), {xi}, "bilinear_resize",
      [xi, ty, tx, w, c, out_h, out_w](detail::TensorImpl<T>& o) {
        auto g = xi->grad_buffer();
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const T wy1 = T(ty[oy].w1), wy0 = T(1) - wy1;
          T* r0 = g.data() + ty[oy].i0 * w * c;
          T* r1 = g.data() + ty[oy].i1 * w * c;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const T wx1 = T(tx[ox].w1), wx0 = T(1) - wx1;
            const std::size_t x0 = tx[ox].i0 * c, x1 = tx[ox].i1 * c;
            const T* go = o.grad.data() + (oy * out_w + ox) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
              r0[x0 + ch] += wy0 * wx0 * go[ch];
              r0[x1 + ch] += wy0 * wx1 * go[ch];
              r1[x0 + ch] += wy1 * wx0 * go[ch];
              r1[x1 + ch] += wy1 * wx1 * go[ch];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::vector<std::size_t> index, Shape shape) {
  require(numel(shape) == index.size(), "gather: " + std::to_string(index.size()) +
                                            " indices for shape " + shape_str(shape));
  std::vector<T> out(index.size());
  const T* src = x.data().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < x.numel(), "gather: index " + std::to_string(index[i]) + " out of range for " +
                                      shape_str(x.shape()));
    out[i] = src[index[i]];
  }
  auto xi = x.impl();
  return make_result<T>(std::move(shape), std::move(out), {xi}, "gather",
                        [xi, index = std::move(index)](detail::TensorImpl<T>& o) {
                          auto g = xi->grad_buffer();
                          for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += o.grad[i];
                        });
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x) {
  require_rank(x, 3, "flip_horizontal");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  std::vector<T> out(x.numel());
  const T* src = x.data().data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      std::copy_n(src + (y * w + xx) * c, c, out.data() + (y * w + (w - 1 - xx)) * c);
  auto xi = x.impl();
  return make_result<T>(x.shape(), std::move(out), {xi}, "flip_horizontal",
                        [xi, h, w, c](detail::TensorImpl<T>& o) {
                          auto g = xi->grad_buffer();
                          for (std::size_t y = 0; y < h; ++y)
                            for (std::size_t xx = 0; xx < w; ++xx)
                              for (std::size_t ch = 0; ch < c; ++ch)
                                g[(y * w + xx) * c + ch] += o.grad[(y * w + (w - 1 - xx)) * c + ch];
                        });
}

#define SEGMENTER_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> transpose(const Tensor<T>&);                                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                         \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);          \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> gelu(const Tensor<T>&);                                                  \
  template Tensor<T> l2_normalize(const Tensor<T>&, std::size_t, T);                          \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                  \
  template CrossEntropy<T> cross_entropy(const Tensor<T>&, std::span<const std::uint8_t>, int); \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);             \
  template Tensor<T> gather(const Tensor<T>&, std::vector<std::size_t>, Shape);              \
  template Tensor<T> flip_horizontal(const Tensor<T>&);

SEGMENTER_INSTANTIATE_OPS(float)
SEGMENTER_INSTANTIATE_OPS(double)

}  // namespace segmenter
