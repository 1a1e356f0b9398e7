#include <algorithm>
#include <cmath>

#include "voxmim/kernels/kernels.hpp"

// Reference kernels. Plain loops, no reassociation tricks: these define the
// numeric baseline the vectorized variants are equivalence-tested against.

namespace voxmim::kernels {
namespace {

template <typename T>
void gemm_nn_ref(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<size_t>(i) * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    for (int p = 0; p < k; ++p) {
      const T aip = a[static_cast<size_t>(i) * k + p];
      const T* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

template <typename T>
void gemm_nt_ref(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + static_cast<size_t>(j) * k;
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      T* cij = c + static_cast<size_t>(i) * n + j;
      *cij = accumulate ? *cij + acc : acc;
    }
  }
}

template <typename T>
void gemm_tn_ref(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, T(0));
  for (int p = 0; p < k; ++p) {
    const T* ap = a + static_cast<size_t>(p) * m;
    const T* bp = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T api = ap[i];
      T* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

template <typename T>
void add_ref(const T* a, const T* b, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
template <typename T>
void sub_ref(const T* a, const T* b, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}
template <typename T>
void mul_ref(const T* a, const T* b, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
template <typename T>
void axpy_ref(T alpha, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
template <typename T>
void scale_ref(const T* x, T alpha, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}
template <typename T>
T dot_ref(const T* a, const T* b, size_t n) {
  T acc = 0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}
template <typename T>
T sum_ref(const T* x, size_t n) {
  T acc = 0;
  for (size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}
template <typename T>
void vexp_ref(const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}
template <typename T>
void vtanh_ref(const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

template <typename T>
constexpr KernelTable<T> make_scalar_table() {
  return KernelTable<T>{gemm_nn_ref<T>, gemm_nt_ref<T>, gemm_tn_ref<T>, add_ref<T>,
                        sub_ref<T>,     mul_ref<T>,     axpy_ref<T>,    scale_ref<T>,
                        dot_ref<T>,     sum_ref<T>,     vexp_ref<T>,    vtanh_ref<T>};
}

}  // namespace

const KernelTable<float>& f32_scalar() {
  static const KernelTable<float> t = make_scalar_table<float>();
  return t;
}

const KernelTable<double>& f64_scalar() {
  static const KernelTable<double> t = make_scalar_table<double>();
  return t;
}

}  // namespace voxmim::kernels
