#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "voxmim/kernels/kernels.hpp"

// AVX2+FMA variants. gemm_nn / gemm_tn accumulate in the same k-order as the
// scalar reference (they differ only by fused rounding); gemm_nt, dot and sum
// use lane-parallel accumulators and therefore reassociate, which is covered
// by the equivalence tolerances in tests/test_kernels.cpp.

namespace voxmim::kernels {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, lo);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  lo = _mm_add_sd(lo, sh);
  return _mm_cvtsd_f64(lo);
}

// cephes-style exp, ~2 ulp over the clamped range
inline __m256 exp256(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647949f);
  const __m256 lo = _mm256_set1_ps(-88.3762626647949f);
  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  const __m256 c1 = _mm256_set1_ps(0.693359375f);
  const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
  const __m256 one = _mm256_set1_ps(1.0f);

  x = _mm256_max_ps(_mm256_min_ps(x, hi), lo);
  __m256 fx = _mm256_floor_ps(_mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f)));
  x = _mm256_fnmadd_ps(fx, c1, x);
  x = _mm256_fnmadd_ps(fx, c2, x);

  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, _mm256_mul_ps(x, x), x);
  y = _mm256_add_ps(y, one);

  __m256i n = _mm256_cvttps_epi32(fx);
  n = _mm256_add_epi32(n, _mm256_set1_epi32(0x7f));
  n = _mm256_slli_epi32(n, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(n));
}

void gemm_nn_avx2_f32(int m, int k, int n, const float* a, const float* b, float* c,
                      bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<size_t>(i) * k;
    float* ci = c + static_cast<size_t>(i) * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0f);
    int p = 0;
    for (; p + 4 <= k; p += 4) {
      const __m256 a0 = _mm256_set1_ps(ai[p + 0]);
      const __m256 a1 = _mm256_set1_ps(ai[p + 1]);
      const __m256 a2 = _mm256_set1_ps(ai[p + 2]);
      const __m256 a3 = _mm256_set1_ps(ai[p + 3]);
      const float* b0 = b + static_cast<size_t>(p + 0) * n;
      const float* b1 = b + static_cast<size_t>(p + 1) * n;
      const float* b2 = b + static_cast<size_t>(p + 2) * n;
      const float* b3 = b + static_cast<size_t>(p + 3) * n;
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        __m256 cv = _mm256_loadu_ps(ci + j);
        cv = _mm256_fmadd_ps(a0, _mm256_loadu_ps(b0 + j), cv);
        cv = _mm256_fmadd_ps(a1, _mm256_loadu_ps(b1 + j), cv);
        cv = _mm256_fmadd_ps(a2, _mm256_loadu_ps(b2 + j), cv);
        cv = _mm256_fmadd_ps(a3, _mm256_loadu_ps(b3 + j), cv);
        _mm256_storeu_ps(ci + j, cv);
      }
      for (; j < n; ++j)
        ci[j] += ai[p] * b0[j] + ai[p + 1] * b1[j] + ai[p + 2] * b2[j] + ai[p + 3] * b3[j];
    }
    for (; p < k; ++p) {
      const __m256 av = _mm256_set1_ps(ai[p]);
      const float* bp = b + static_cast<size_t>(p) * n;
      int j = 0;
      for (; j + 8 <= n; j += 8)
        _mm256_storeu_ps(ci + j, _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + j), _mm256_loadu_ps(ci + j)));
      for (; j < n; ++j) ci[j] += ai[p] * bp[j];
    }
  }
}

void gemm_nt_avx2_f32(int m, int k, int n, const float* a, const float* b, float* c,
                      bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const float* bj = b + static_cast<size_t>(j) * k;
      __m256 acc0 = _mm256_setzero_ps();
      __m256 acc1 = _mm256_setzero_ps();
      int p = 0;
      for (; p + 16 <= k; p += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(ai + p), _mm256_loadu_ps(bj + p), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(ai + p + 8), _mm256_loadu_ps(bj + p + 8), acc1);
      }
      for (; p + 8 <= k; p += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(ai + p), _mm256_loadu_ps(bj + p), acc0);
      float acc = hsum(_mm256_add_ps(acc0, acc1));
      for (; p < k; ++p) acc += ai[p] * bj[p];
      float* cij = c + static_cast<size_t>(i) * n + j;
      *cij = accumulate ? *cij + acc : acc;
    }
  }
}

void gemm_tn_avx2_f32(int m, int k, int n, const float* a, const float* b, float* c,
                      bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, 0.0f);
  for (int p = 0; p < k; ++p) {
    const float* ap = a + static_cast<size_t>(p) * m;
    const float* bp = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const __m256 av = _mm256_set1_ps(ap[i]);
      float* ci = c + static_cast<size_t>(i) * n;
      int j = 0;
      for (; j + 8 <= n; j += 8)
        _mm256_storeu_ps(ci + j, _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + j), _mm256_loadu_ps(ci + j)));
      for (; j < n; ++j) ci[j] += ap[i] * bp[j];
    }
  }
}

void add_avx2_f32(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}
void sub_avx2_f32(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}
void mul_avx2_f32(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}
void axpy_avx2_f32(float alpha, const float* x, float* y, size_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}
void scale_avx2_f32(const float* x, float alpha, float* y, size_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = alpha * x[i];
}
float dot_avx2_f32(const float* a, const float* b, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}
float sum_avx2_f32(const float* x, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}
void vexp_avx2_f32(const float* x, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, exp256(_mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = std::exp(x[i]);
}
void vtanh_avx2_f32(const float* x, float* y, size_t n) {
  // tanh(x) = sign(x) * (1 - 2 / (exp(2|x|) + 1))
  const __m256 sign_mask = _mm256_set1_ps(-0.0f);
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 two = _mm256_set1_ps(2.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 v = _mm256_loadu_ps(x + i);
    __m256 sign = _mm256_and_ps(v, sign_mask);
    __m256 ax = _mm256_andnot_ps(sign_mask, v);
    __m256 e = exp256(_mm256_mul_ps(two, ax));
    __m256 t = _mm256_sub_ps(one, _mm256_div_ps(two, _mm256_add_ps(e, one)));
    _mm256_storeu_ps(y + i, _mm256_or_ps(t, sign));
  }
  for (; i < n; ++i) y[i] = std::tanh(x[i]);
}

void gemm_nn_avx2_f64(int m, int k, int n, const double* a, const double* b, double* c,
                      bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    for (int p = 0; p < k; ++p) {
      const __m256d av = _mm256_set1_pd(ai[p]);
      const double* bp = b + static_cast<size_t>(p) * n;
      int j = 0;
      for (; j + 4 <= n; j += 4)
        _mm256_storeu_pd(ci + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + j), _mm256_loadu_pd(ci + j)));
      for (; j < n; ++j) ci[j] += ai[p] * bp[j];
    }
  }
}
void gemm_nt_avx2_f64(int m, int k, int n, const double* a, const double* b, double* c,
                      bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      __m256d acc4 = _mm256_setzero_pd();
      int p = 0;
      for (; p + 4 <= k; p += 4)
        acc4 = _mm256_fmadd_pd(_mm256_loadu_pd(ai + p), _mm256_loadu_pd(bj + p), acc4);
      double acc = hsum(acc4);
      for (; p < k; ++p) acc += ai[p] * bj[p];
      double* cij = c + static_cast<size_t>(i) * n + j;
      *cij = accumulate ? *cij + acc : acc;
    }
  }
}
void gemm_tn_avx2_f64(int m, int k, int n, const double* a, const double* b, double* c,
                      bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, 0.0);
  for (int p = 0; p < k; ++p) {
    const double* ap = a + static_cast<size_t>(p) * m;
    const double* bp = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const __m256d av = _mm256_set1_pd(ap[i]);
      double* ci = c + static_cast<size_t>(i) * n;
      int j = 0;
      for (; j + 4 <= n; j += 4)
        _mm256_storeu_pd(ci + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + j), _mm256_loadu_pd(ci + j)));
      for (; j < n; ++j) ci[j] += ap[i] * bp[j];
    }
  }
}
void add_avx2_f64(const double* a, const double* b, double* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}
void sub_avx2_f64(const double* a, const double* b, double* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}
void mul_avx2_f64(const double* a, const double* b, double* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}
void axpy_avx2_f64(double alpha, const double* x, double* y, size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}
void scale_avx2_f64(const double* x, double alpha, double* y, size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = alpha * x[i];
}
double dot_avx2_f64(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}
double sum_avx2_f64(const double* x, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}
// double-precision transcendentals stay on libm: they only run in checks/stats
void vexp_avx2_f64(const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}
void vtanh_avx2_f64(const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

}  // namespace

const KernelTable<float>& f32_avx2() {
  static const KernelTable<float> t = {gemm_nn_avx2_f32, gemm_nt_avx2_f32, gemm_tn_avx2_f32,
                                       add_avx2_f32,     sub_avx2_f32,     mul_avx2_f32,
                                       axpy_avx2_f32,    scale_avx2_f32,   dot_avx2_f32,
                                       sum_avx2_f32,     vexp_avx2_f32,    vtanh_avx2_f32};
  return t;
}

const KernelTable<double>& f64_avx2() {
  static const KernelTable<double> t = {gemm_nn_avx2_f64, gemm_nt_avx2_f64, gemm_tn_avx2_f64,
                                        add_avx2_f64,     sub_avx2_f64,     mul_avx2_f64,
                                        axpy_avx2_f64,    scale_avx2_f64,   dot_avx2_f64,
                                        sum_avx2_f64,     vexp_avx2_f64,    vtanh_avx2_f64};
  return t;
}

}  // namespace voxmim::kernels

#endif  // x86_64
