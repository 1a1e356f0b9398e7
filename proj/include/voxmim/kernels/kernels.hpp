#pragma once

#include <cstddef>
#include <string_view>

// Data-parallel inner loops behind the tensor engine. Every routine exists as
// a scalar reference kernel and, on x86 with AVX2+FMA, as a vectorized variant.
// The active table is chosen once at startup (or forced via select_backend /
// the VOXMIM_KERNELS environment variable) and is deterministic per backend.

namespace voxmim::kernels {

template <typename T>
struct KernelTable {
  // Row-major GEMM. c is (m x n). `accumulate` adds into c instead of overwriting.
  //   gemm_nn: c = a (m x k) * b (k x n)
  //   gemm_nt: c = a (m x k) * b^T, b stored (n x k)
  //   gemm_tn: c = a^T * b, a stored (k x m), b stored (k x n)
  void (*gemm_nn)(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate);
  void (*gemm_nt)(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate);
  void (*gemm_tn)(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate);

  void (*add)(const T* a, const T* b, T* y, size_t n);
  void (*sub)(const T* a, const T* b, T* y, size_t n);
  void (*mul)(const T* a, const T* b, T* y, size_t n);
  void (*axpy)(T alpha, const T* x, T* y, size_t n);   // y += alpha * x
  void (*scale)(const T* x, T alpha, T* y, size_t n);  // y  = alpha * x
  T (*dot)(const T* a, const T* b, size_t n);
  T (*sum)(const T* x, size_t n);
  void (*vexp)(const T* x, T* y, size_t n);
  void (*vtanh)(const T* x, T* y, size_t n);
};

const KernelTable<float>& f32();
const KernelTable<double>& f64();
const KernelTable<float>& f32_scalar();
const KernelTable<double>& f64_scalar();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable<float>& f32_avx2();
const KernelTable<double>& f64_avx2();
#endif

bool avx2_available();
// name: "auto", "scalar" or "avx2"; returns false if the backend cannot be selected
bool select_backend(std::string_view name);
std::string_view active_backend();

template <typename T>
const KernelTable<T>& table();
template <>
inline const KernelTable<float>& table<float>() {
  return f32();
}
template <>
inline const KernelTable<double>& table<double>() {
  return f64();
}

}  // namespace voxmim::kernels
