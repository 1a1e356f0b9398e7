#include <cmath>
#include <vector>

#include "doctest.h"
#include "voxmim/kernels/kernels.hpp"
#include "voxmim/rng.hpp"

using namespace voxmim;

namespace {

template <typename T>
std::vector<T> random_vec(Rng& rng, size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return v;
}

template <typename T>
void expect_close(const std::vector<T>& a, const std::vector<T>& b, double rtol, double atol) {
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    const double diff = std::fabs(double(a[i]) - double(b[i]));
    const double bound = atol + rtol * std::fabs(double(b[i]));
    if (diff > bound) {
      CAPTURE(i);
      CAPTURE(a[i]);
      CAPTURE(b[i]);
      REQUIRE(diff <= bound);
    }
  }
}

}  // namespace

#if defined(__x86_64__) || defined(_M_X64)

TEST_CASE("avx2 gemm variants match scalar reference") {
  if (!kernels::avx2_available()) return;
  const auto& ref = kernels::f32_scalar();
  const auto& vec = kernels::f32_avx2();
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const int m = 1 + int(rng.below(40));
    const int k = 1 + int(rng.below(70));
    const int n = 1 + int(rng.below(90));
    auto a = random_vec<float>(rng, size_t(m) * k);
    auto b = random_vec<float>(rng, size_t(k) * n);
    auto bt = random_vec<float>(rng, size_t(n) * k);
    auto at = random_vec<float>(rng, size_t(k) * m);
    std::vector<float> c0(size_t(m) * n), c1(size_t(m) * n);

    // absolute slack scales with the reduction length: the vector kernels
    // reassociate partial sums, so agreement is to accumulated round-off,
    // not to the final (possibly cancelled) magnitude
    const double atol = 2e-6 * std::sqrt(double(k)) * 4.0;

    ref.gemm_nn(m, k, n, a.data(), b.data(), c0.data(), false);
    vec.gemm_nn(m, k, n, a.data(), b.data(), c1.data(), false);
    expect_close(c1, c0, 1e-5, atol);

    ref.gemm_nt(m, k, n, a.data(), bt.data(), c0.data(), false);
    vec.gemm_nt(m, k, n, a.data(), bt.data(), c1.data(), false);
    expect_close(c1, c0, 1e-5, atol);

    ref.gemm_tn(m, k, n, at.data(), b.data(), c0.data(), false);
    vec.gemm_tn(m, k, n, at.data(), b.data(), c1.data(), false);
    expect_close(c1, c0, 1e-5, atol);

    // accumulate mode adds into existing c
    auto seed = random_vec<float>(rng, size_t(m) * n);
    c0 = seed;
    c1 = seed;
    ref.gemm_nn(m, k, n, a.data(), b.data(), c0.data(), true);
    vec.gemm_nn(m, k, n, a.data(), b.data(), c1.data(), true);
    expect_close(c1, c0, 1e-5, atol);
  }
}

TEST_CASE("avx2 elementwise and reductions match scalar reference") {
  if (!kernels::avx2_available()) return;
  const auto& ref = kernels::f32_scalar();
  const auto& vec = kernels::f32_avx2();
  Rng rng(11);
  for (size_t n : {1, 3, 8, 17, 64, 1000, 4097}) {
    auto a = random_vec<float>(rng, n);
    auto b = random_vec<float>(rng, n);
    std::vector<float> y0(n), y1(n);

    ref.add(a.data(), b.data(), y0.data(), n);
    vec.add(a.data(), b.data(), y1.data(), n);
    expect_close(y1, y0, 0, 0);

    ref.sub(a.data(), b.data(), y0.data(), n);
    vec.sub(a.data(), b.data(), y1.data(), n);
    expect_close(y1, y0, 0, 0);

    ref.mul(a.data(), b.data(), y0.data(), n);
    vec.mul(a.data(), b.data(), y1.data(), n);
    expect_close(y1, y0, 0, 0);

    y0 = b;
    y1 = b;
    ref.axpy(0.37f, a.data(), y0.data(), n);
    vec.axpy(0.37f, a.data(), y1.data(), n);
    expect_close(y1, y0, 1e-6, 1e-7);

    ref.scale(a.data(), -1.75f, y0.data(), n);
    vec.scale(a.data(), -1.75f, y1.data(), n);
    expect_close(y1, y0, 0, 0);

    CHECK(std::fabs(ref.dot(a.data(), b.data(), n) - vec.dot(a.data(), b.data(), n)) <=
          1e-4f + 1e-5f * std::fabs(ref.dot(a.data(), b.data(), n)));
    CHECK(std::fabs(ref.sum(a.data(), n) - vec.sum(a.data(), n)) <=
          1e-4f + 1e-5f * std::fabs(ref.sum(a.data(), n)));
  }
}

TEST_CASE("avx2 exp and tanh stay within tolerance of libm") {
  if (!kernels::avx2_available()) return;
  const auto& ref = kernels::f32_scalar();
  const auto& vec = kernels::f32_avx2();
  Rng rng(13);
  std::vector<float> x;
  for (int i = 0; i < 3000; ++i) x.push_back(static_cast<float>(rng.uniform(-30.0, 30.0)));
  for (int i = 0; i < 100; ++i) x.push_back(static_cast<float>(rng.uniform(-1e-4, 1e-4)));
  x.push_back(0.0f);
  x.push_back(-88.0f);
  x.push_back(20.0f);
  std::vector<float> y0(x.size()), y1(x.size());
  ref.vexp(x.data(), y0.data(), x.size());
  vec.vexp(x.data(), y1.data(), x.size());
  expect_close(y1, y0, 2e-6, 1e-30);
  ref.vtanh(x.data(), y0.data(), x.size());
  vec.vtanh(x.data(), y1.data(), x.size());
  expect_close(y1, y0, 1e-5, 1e-6);
}

TEST_CASE("avx2 double-precision kernels match scalar reference") {
  if (!kernels::avx2_available()) return;
  const auto& ref = kernels::f64_scalar();
  const auto& vec = kernels::f64_avx2();
  Rng rng(17);
  const int m = 13, k = 29, n = 21;
  auto a = random_vec<double>(rng, size_t(m) * k);
  auto b = random_vec<double>(rng, size_t(k) * n);
  std::vector<double> c0(size_t(m) * n), c1(size_t(m) * n);
  ref.gemm_nn(m, k, n, a.data(), b.data(), c0.data(), false);
  vec.gemm_nn(m, k, n, a.data(), b.data(), c1.data(), false);
  expect_close(c1, c0, 1e-13, 1e-14);
  CHECK(ref.sum(a.data(), a.size()) == doctest::Approx(vec.sum(a.data(), a.size())).epsilon(1e-12));
}

#endif

TEST_CASE("backend selection") {
  CHECK(kernels::select_backend("scalar"));
  CHECK(kernels::active_backend() == "scalar");
  CHECK_FALSE(kernels::select_backend("bogus"));
  if (kernels::avx2_available()) {
    CHECK(kernels::select_backend("avx2"));
    CHECK(kernels::active_backend() == "avx2");
  }
  CHECK(kernels::select_backend("auto"));
}
