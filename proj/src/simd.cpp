#include "slotkit/simd.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace slotkit::kern {

const FloatKernels* avx2_table();  // nullptr when compiled without AVX2 support

namespace {

const FloatKernels scalar_table = {
    &gemm_nn_ref<float>, &gemm_nt_ref<float>, &gemm_tn_ref<float>,
    &add_ref<float>,     &sub_ref<float>,     &mul_ref<float>,
    &axpy_ref<float>,    &scale_ref<float>,
    &relu_fwd_ref<float>, &relu_bwd_ref<float>,
    &adam_ref<float>,    &sum_sq_ref<float>,
    "scalar",
};

Backend pick_initial() {
  const char* env = std::getenv("SLOTKIT_SIMD");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!avx2_supported()) throw std::runtime_error("SLOTKIT_SIMD=avx2 but AVX2 is unavailable");
      return Backend::avx2;
    }
  }
  return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

Backend& current() {
  static Backend b = pick_initial();
  return b;
}

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
  if (avx2_table() == nullptr) return false;
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active_backend() { return current(); }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_supported())
    throw std::runtime_error("AVX2 backend unavailable on this machine");
  current() = b;
}

const FloatKernels& fk() {
  return current() == Backend::avx2 ? *avx2_table() : scalar_table;
}

}  // namespace slotkit::kern
