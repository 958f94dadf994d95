#include "slotkit/simd.hpp"

#if (defined(__x86_64__) || defined(__i386__)) && !defined(SLOTKIT_NO_AVX2)
#define SLOTKIT_AVX2_BUILT 1
#include <immintrin.h>
#endif

namespace slotkit::kern {

#if SLOTKIT_AVX2_BUILT

namespace {

// 4x16 register-blocked micro-kernel, FMA accumulation, unaligned loads.
template <int R>
void nn_rows(int n, int k, const float* a, size_t lda, const float* b, float* c, size_t ldc, bool acc) {
  int j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256 c0[R], c1[R];
    for (int r = 0; r < R; ++r) {
      c0[r] = acc ? _mm256_loadu_ps(c + r * ldc + j) : _mm256_setzero_ps();
      c1[r] = acc ? _mm256_loadu_ps(c + r * ldc + j + 8) : _mm256_setzero_ps();
    }
    for (int p = 0; p < k; ++p) {
      __m256 b0 = _mm256_loadu_ps(b + size_t(p) * n + j);
      __m256 b1 = _mm256_loadu_ps(b + size_t(p) * n + j + 8);
      for (int r = 0; r < R; ++r) {
        __m256 av = _mm256_broadcast_ss(a + r * lda + p);
        c0[r] = _mm256_fmadd_ps(av, b0, c0[r]);
        c1[r] = _mm256_fmadd_ps(av, b1, c1[r]);
      }
    }
    for (int r = 0; r < R; ++r) {
      _mm256_storeu_ps(c + r * ldc + j, c0[r]);
      _mm256_storeu_ps(c + r * ldc + j + 8, c1[r]);
    }
  }
  for (; j + 8 <= n; j += 8) {
    __m256 c0[R];
    for (int r = 0; r < R; ++r)
      c0[r] = acc ? _mm256_loadu_ps(c + r * ldc + j) : _mm256_setzero_ps();
    for (int p = 0; p < k; ++p) {
      __m256 b0 = _mm256_loadu_ps(b + size_t(p) * n + j);
      for (int r = 0; r < R; ++r)
        c0[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * lda + p), b0, c0[r]);
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_ps(c + r * ldc + j, c0[r]);
  }
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      float s = acc ? c[r * ldc + j] : 0.0f;
      for (int p = 0; p < k; ++p) s += a[r * lda + p] * b[size_t(p) * n + j];
      c[r * ldc + j] = s;
    }
  }
}

void gemm_nn_avx2(int m, int n, int k, const float* a, const float* b, float* c, bool acc) {
  int i = 0;
  for (; i + 4 <= m; i += 4)
    nn_rows<4>(n, k, a + size_t(i) * k, k, b, c + size_t(i) * n, n, acc);
  switch (m - i) {
    case 3: nn_rows<3>(n, k, a + size_t(i) * k, k, b, c + size_t(i) * n, n, acc); break;
    case 2: nn_rows<2>(n, k, a + size_t(i) * k, k, b, c + size_t(i) * n, n, acc); break;
    case 1: nn_rows<1>(n, k, a + size_t(i) * k, k, b, c + size_t(i) * n, n, acc); break;
    default: break;
  }
}

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehl_ps(lo, lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_shuffle_ps(lo, lo, 0x55);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

void gemm_nt_avx2(int m, int n, int k, const float* a, const float* b, float* c, bool acc) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + size_t(i) * k;
    float* crow = c + size_t(i) * n;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
      __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
      const float* b0 = b + size_t(j) * k;
      const float* b1 = b + size_t(j + 1) * k;
      const float* b2 = b + size_t(j + 2) * k;
      const float* b3 = b + size_t(j + 3) * k;
      int p = 0;
      for (; p + 8 <= k; p += 8) {
        __m256 av = _mm256_loadu_ps(arow + p);
        s0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + p), s0);
        s1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + p), s1);
        s2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + p), s2);
        s3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + p), s3);
      }
      float d0 = hsum8(s0), d1 = hsum8(s1), d2 = hsum8(s2), d3 = hsum8(s3);
      for (; p < k; ++p) {
        float av = arow[p];
        d0 += av * b0[p];
        d1 += av * b1[p];
        d2 += av * b2[p];
        d3 += av * b3[p];
      }
      if (acc) {
        crow[j] += d0; crow[j + 1] += d1; crow[j + 2] += d2; crow[j + 3] += d3;
      } else {
        crow[j] = d0; crow[j + 1] = d1; crow[j + 2] = d2; crow[j + 3] = d3;
      }
    }
    for (; j < n; ++j) {
      const float* brow = b + size_t(j) * k;
      __m256 s = _mm256_setzero_ps();
      int p = 0;
      for (; p + 8 <= k; p += 8)
        s = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p), s);
      float d = hsum8(s);
      for (; p < k; ++p) d += arow[p] * brow[p];
      crow[j] = acc ? crow[j] + d : d;
    }
  }
}

void gemm_tn_avx2(int m, int n, int kk, const float* a, const float* b, float* c, bool acc) {
  if (!acc)
    for (size_t i = 0; i < size_t(m) * n; ++i) c[i] = 0.0f;
  for (int r = 0; r < kk; ++r) {
    const float* arow = a + size_t(r) * m;
    const float* brow = b + size_t(r) * n;
    for (int i = 0; i < m; ++i) {
      __m256 av = _mm256_broadcast_ss(arow + i);
      float* crow = c + size_t(i) * n;
      int j = 0;
      for (; j + 8 <= n; j += 8)
        _mm256_storeu_ps(crow + j,
                         _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + j), _mm256_loadu_ps(crow + j)));
      for (; j < n; ++j) crow[j] += arow[i] * brow[j];
    }
  }
}

void add_avx2(const float* x, const float* y, float* out, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}
void sub_avx2(const float* x, const float* y, float* out, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] - y[i];
}
void mul_avx2(const float* x, const float* y, float* out, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}
void axpy_avx2(float a, const float* x, float* y, size_t n) {
  __m256 av = _mm256_set1_ps(a);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 prod = _mm256_mul_ps(av, _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}
void scale_avx2(float a, float* x, size_t n) {
  __m256 av = _mm256_set1_ps(a);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(x + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= a;
}
void relu_fwd_avx2(const float* x, float* y, size_t n) {
  __m256 z = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), z));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}
void relu_bwd_avx2(const float* x, const float* dy, float* dx, size_t n) {
  __m256 z = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), z, _CMP_GT_OQ);
    __m256 gated = _mm256_and_ps(mask, _mm256_loadu_ps(dy + i));
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), gated));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0f) dx[i] += dy[i];
}

// No FMA here so results match the scalar reference bitwise.
void adam_avx2(float* p, float* m, float* v, const float* g, size_t n,
               float lr, float b1, float b2, float eps, float bc1, float bc2) {
  __m256 vb1 = _mm256_set1_ps(b1), v1mb1 = _mm256_set1_ps(1.0f - b1);
  __m256 vb2 = _mm256_set1_ps(b2), v1mb2 = _mm256_set1_ps(1.0f - b2);
  __m256 vlr = _mm256_set1_ps(lr), veps = _mm256_set1_ps(eps);
  __m256 vbc1 = _mm256_set1_ps(bc1), vbc2 = _mm256_set1_ps(bc2);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 gi = _mm256_loadu_ps(g + i);
    __m256 mi = _mm256_add_ps(_mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)), _mm256_mul_ps(v1mb1, gi));
    __m256 g2 = _mm256_mul_ps(gi, gi);
    __m256 vi = _mm256_add_ps(_mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)), _mm256_mul_ps(v1mb2, g2));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    __m256 mh = _mm256_mul_ps(mi, vbc1);
    __m256 vh = _mm256_mul_ps(vi, vbc2);
    __m256 den = _mm256_add_ps(_mm256_sqrt_ps(vh), veps);
    __m256 upd = _mm256_div_ps(_mm256_mul_ps(vlr, mh), den);
    _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
  }
  if (i < n) adam_ref(p + i, m + i, v + i, g + i, n - i, lr, b1, b2, eps, bc1, bc2);
}

double sum_sq_avx2(const float* x, size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 v = _mm256_loadu_ps(x + i);
    __m256d lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
    __m256d hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
    acc0 = _mm256_fmadd_pd(lo, lo, acc0);
    acc1 = _mm256_fmadd_pd(hi, hi, acc1);
  }
  double lanes[8];
  _mm256_storeu_pd(lanes, acc0);
  _mm256_storeu_pd(lanes + 4, acc1);
  double s = 0.0;
  for (double lane : lanes) s += lane;
  for (; i < n; ++i) s += double(x[i]) * double(x[i]);
  return s;
}

const FloatKernels avx2_kernels = {
    &gemm_nn_avx2, &gemm_nt_avx2, &gemm_tn_avx2,
    &add_avx2,     &sub_avx2,     &mul_avx2,
    &axpy_avx2,    &scale_avx2,
    &relu_fwd_avx2, &relu_bwd_avx2,
    &adam_avx2,    &sum_sq_avx2,
    "avx2",
};

}  // namespace

const FloatKernels* avx2_table() { return &avx2_kernels; }

#else

const FloatKernels* avx2_table() { return nullptr; }

#endif

}  // namespace slotkit::kern
