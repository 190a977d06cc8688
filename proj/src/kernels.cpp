#include "segmenter/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "segmenter/error.hpp"

namespace segmenter::kernels {

#if defined(SEGMENTER_HAVE_AVX2)
namespace avx2 {
extern const KernelSet<float> kAvx2F;
extern const KernelSet<double> kAvx2D;
}  // namespace avx2
#endif

namespace {

bool cpu_has_avx2() {
#if defined(SEGMENTER_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  const char* env = std::getenv("SEGMENTER_KERNELS");
  const std::string choice = env ? env : "auto";
  if (choice == "scalar") return Backend::Scalar;
  if (choice == "avx2") {
    if (!cpu_has_avx2()) throw ContractError("SEGMENTER_KERNELS=avx2 but AVX2/FMA is unavailable");
    return Backend::Avx2;
  }
  return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& selected() {
  static std::atomic<Backend> b{initial_backend()};
  return b;
}

}  // namespace

template <>
const KernelSet<float>* avx2_kernels<float>() {
#if defined(SEGMENTER_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2::kAvx2F : nullptr;
#else
  return nullptr;
#endif
}

template <>
const KernelSet<double>* avx2_kernels<double>() {
#if defined(SEGMENTER_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2::kAvx2D : nullptr;
#else
  return nullptr;
#endif
}

template <typename T>
const KernelSet<T>& active() {
  if (selected().load(std::memory_order_relaxed) == Backend::Avx2) {
    if (const KernelSet<T>* k = avx2_kernels<T>()) return *k;
  }
  return scalar_kernels<T>();
}

template const KernelSet<float>& active<float>();
template const KernelSet<double>& active<double>();

bool backend_available(Backend b) {
  return b == Backend::Scalar || avx2_kernels<float>() != nullptr;
}

void set_backend(Backend b) {
  if (!backend_available(b)) {
    throw ContractError("kernel backend '" + std::string(backend_name(b)) + "' is not available");
  }
  selected().store(b);
}

Backend current_backend() { return selected().load(); }

std::string_view backend_name(Backend b) { return b == Backend::Avx2 ? "avx2" : "scalar"; }

}  // namespace segmenter::kernels
