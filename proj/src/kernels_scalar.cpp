#include "segmenter/kernels.hpp"

namespace segmenter::kernels {
namespace {

template <typename T>
void gemm_ref(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
              const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
              std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      T& out = c[i * ldc + j];
      out = beta == T(0) ? alpha * acc : alpha * acc + beta * out;
    }
  }
}

template <typename T>
T dot_ref(const T* x, const T* y, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void axpy_ref(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T sum_ref(const T* x, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <typename T>
T max_ref(const T* x, std::size_t n) {
  T m = x[0];
  for (std::size_t i = 1; i < n; ++i) {
    if (x[i] > m || x[i] != x[i]) m = x[i];
    if (m != m) break;
  }
  return m;
}

template <typename T>
constexpr KernelSet<T> make_scalar() {
  return {Backend::Scalar, "scalar", &gemm_ref<T>, &dot_ref<T>, &axpy_ref<T>, &sum_ref<T>, &max_ref<T>};
}

constexpr KernelSet<float> kScalarF = make_scalar<float>();
constexpr KernelSet<double> kScalarD = make_scalar<double>();

}  // namespace

template <>
const KernelSet<float>& scalar_kernels<float>() {
  return kScalarF;
}
template <>
const KernelSet<double>& scalar_kernels<double>() {
  return kScalarD;
}

}  // namespace segmenter::kernels
