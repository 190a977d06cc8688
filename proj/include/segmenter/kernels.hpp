#pragma once

// Dense arithmetic kernels used by the tensor ops. Every kernel has a portable
// scalar reference implementation; SIMD variants are chosen at runtime when the
// CPU supports them and must agree with the reference to rounding tolerance.

#include <cstddef>
#include <string_view>

namespace segmenter::kernels {

enum class Backend { Scalar, Avx2 };

template <typename T>
struct KernelSet {
  Backend backend;
  const char* name;

  // Row-major C = alpha * op(A) * op(B) + beta * C, op(X) = X or X^T.
  // op(A) is m x k, op(B) is k x n. lda/ldb/ldc are row strides as stored.
  // With beta == 0 the previous contents of C are ignored.
  void (*gemm)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
               const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
               std::size_t ldc);
  T (*dot)(const T* x, const T* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  T (*sum)(const T* x, std::size_t n);
  // n >= 1
  T (*max)(const T* x, std::size_t n);
};

template <typename T>
const KernelSet<T>& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks the features.
template <typename T>
const KernelSet<T>* avx2_kernels();

// Kernels used by all tensor ops. Initially the best supported backend, or the
// one named by SEGMENTER_KERNELS ("scalar", "avx2", "auto").
template <typename T>
const KernelSet<T>& active();

bool backend_available(Backend b);

// Switches the process-wide backend. Throws ContractError when unavailable.
void set_backend(Backend b);
Backend current_backend();
std::string_view backend_name(Backend b);

}  // namespace segmenter::kernels
