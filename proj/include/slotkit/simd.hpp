#pragma once
// Runtime-dispatched float kernels: scalar reference implementations plus an
// AVX2/FMA variant selected by cpuid (override with set_backend or the
// SLOTKIT_SIMD env var: "scalar" | "avx2" | "auto").
//
// The scalar bodies are templates so the double-precision path (used by the
// finite-difference gradient checks) shares the exact same reference code.

#include <cmath>
#include <cstddef>
#include <string>

namespace slotkit::kern {

enum class Backend { scalar, avx2 };

bool avx2_supported();
Backend active_backend();
void set_backend(Backend b);  // throws std::runtime_error if unsupported

// C[m,n] = A[m,k] * B[k,n]        (acc: add into C instead of overwrite)
// C[m,n] = A[m,k] * B[n,k]^T      (gemm_nt)
// C[m,n] = A[kk,m]^T * B[kk,n]    (gemm_tn)
struct FloatKernels {
  void (*gemm_nn)(int m, int n, int k, const float* a, const float* b, float* c, bool acc);
  void (*gemm_nt)(int m, int n, int k, const float* a, const float* b, float* c, bool acc);
  void (*gemm_tn)(int m, int n, int kk, const float* a, const float* b, float* c, bool acc);
  void (*add)(const float* x, const float* y, float* out, size_t n);
  void (*sub)(const float* x, const float* y, float* out, size_t n);
  void (*mul)(const float* x, const float* y, float* out, size_t n);
  void (*axpy)(float a, const float* x, float* y, size_t n);
  void (*scale)(float a, float* x, size_t n);
  void (*relu_fwd)(const float* x, float* y, size_t n);
  void (*relu_bwd)(const float* x, const float* dy, float* dx, size_t n);
  void (*adam)(float* p, float* m, float* v, const float* g, size_t n,
               float lr, float b1, float b2, float eps, float bc1, float bc2);
  double (*sum_sq)(const float* x, size_t n);
  const char* name;
};

const FloatKernels& fk();  // table for the active backend

// ---- scalar reference bodies (shared by the double path) ----

template <class T>
inline void gemm_nn_ref(int m, int n, int k, const T* a, const T* b, T* c, bool acc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + size_t(i) * n;
    if (!acc)
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    for (int p = 0; p < k; ++p) {
      T av = a[size_t(i) * k + p];
      const T* brow = b + size_t(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
inline void gemm_nt_ref(int m, int n, int k, const T* a, const T* b, T* c, bool acc) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + size_t(i) * k;
    T* crow = c + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + size_t(j) * k;
      T s = T(0);
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = acc ? crow[j] + s : s;
    }
  }
}

template <class T>
inline void gemm_tn_ref(int m, int n, int kk, const T* a, const T* b, T* c, bool acc) {
  if (!acc)
    for (size_t i = 0; i < size_t(m) * n; ++i) c[i] = T(0);
  for (int r = 0; r < kk; ++r) {
    const T* arow = a + size_t(r) * m;
    const T* brow = b + size_t(r) * n;
    for (int i = 0; i < m; ++i) {
      T av = arow[i];
      T* crow = c + size_t(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T> inline void add_ref(const T* x, const T* y, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}
template <class T> inline void sub_ref(const T* x, const T* y, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}
template <class T> inline void mul_ref(const T* x, const T* y, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}
template <class T> inline void axpy_ref(T a, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
template <class T> inline void scale_ref(T a, T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) x[i] *= a;
}
template <class T> inline void relu_fwd_ref(const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}
template <class T> inline void relu_bwd_ref(const T* x, const T* dy, T* dx, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (x[i] > T(0)) dx[i] += dy[i];
}
template <class T>
inline void adam_ref(T* p, T* m, T* v, const T* g, size_t n,
                     T lr, T b1, T b2, T eps, T bc1, T bc2) {
  for (size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (T(1) - b1) * g[i];
    v[i] = b2 * v[i] + (T(1) - b2) * (g[i] * g[i]);
    T mh = m[i] * bc1;
    T vh = v[i] * bc2;
    p[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}
template <class T> inline double sum_sq_ref(const T* x, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += double(x[i]) * double(x[i]);
  return s;
}

// Generic entry points: float routes through the dispatch table, any other
// scalar type uses the reference bodies directly.
template <class T> inline void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool acc) {
  gemm_nn_ref(m, n, k, a, b, c, acc);
}
template <> inline void gemm_nn<float>(int m, int n, int k, const float* a, const float* b, float* c, bool acc) {
  fk().gemm_nn(m, n, k, a, b, c, acc);
}
template <class T> inline void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool acc) {
  gemm_nt_ref(m, n, k, a, b, c, acc);
}
template <> inline void gemm_nt<float>(int m, int n, int k, const float* a, const float* b, float* c, bool acc) {
  fk().gemm_nt(m, n, k, a, b, c, acc);
}
template <class T> inline void gemm_tn(int m, int n, int kk, const T* a, const T* b, T* c, bool acc) {
  gemm_tn_ref(m, n, kk, a, b, c, acc);
}
template <> inline void gemm_tn<float>(int m, int n, int kk, const float* a, const float* b, float* c, bool acc) {
  fk().gemm_tn(m, n, kk, a, b, c, acc);
}
template <class T> inline void add(const T* x, const T* y, T* out, size_t n) { add_ref(x, y, out, n); }
template <> inline void add<float>(const float* x, const float* y, float* out, size_t n) { fk().add(x, y, out, n); }
template <class T> inline void sub(const T* x, const T* y, T* out, size_t n) { sub_ref(x, y, out, n); }
template <> inline void sub<float>(const float* x, const float* y, float* out, size_t n) { fk().sub(x, y, out, n); }
template <class T> inline void mul(const T* x, const T* y, T* out, size_t n) { mul_ref(x, y, out, n); }
template <> inline void mul<float>(const float* x, const float* y, float* out, size_t n) { fk().mul(x, y, out, n); }
template <class T> inline void axpy(T a, const T* x, T* y, size_t n) { axpy_ref(a, x, y, n); }
template <> inline void axpy<float>(float a, const float* x, float* y, size_t n) { fk().axpy(a, x, y, n); }
template <class T> inline void scale(T a, T* x, size_t n) { scale_ref(a, x, n); }
template <> inline void scale<float>(float a, float* x, size_t n) { fk().scale(a, x, n); }
template <class T> inline void relu_fwd(const T* x, T* y, size_t n) { relu_fwd_ref(x, y, n); }
template <> inline void relu_fwd<float>(const float* x, float* y, size_t n) { fk().relu_fwd(x, y, n); }
template <class T> inline void relu_bwd(const T* x, const T* dy, T* dx, size_t n) { relu_bwd_ref(x, dy, dx, n); }
template <> inline void relu_bwd<float>(const float* x, const float* dy, float* dx, size_t n) { fk().relu_bwd(x, dy, dx, n); }
template <class T>
inline void adam(T* p, T* m, T* v, const T* g, size_t n, T lr, T b1, T b2, T eps, T bc1, T bc2) {
  adam_ref(p, m, v, g, n, lr, b1, b2, eps, bc1, bc2);
}
template <>
inline void adam<float>(float* p, float* m, float* v, const float* g, size_t n,
                        float lr, float b1, float b2, float eps, float bc1, float bc2) {
  fk().adam(p, m, v, g, n, lr, b1, b2, eps, bc1, bc2);
}
template <class T> inline double sum_sq(const T* x, size_t n) { return sum_sq_ref(x, n); }
template <> inline double sum_sq<float>(const float* x, size_t n) { return fk().sum_sq(x, n); }

}  // namespace slotkit::kern
