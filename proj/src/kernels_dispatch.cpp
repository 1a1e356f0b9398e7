#include <atomic>
#include <cstdlib>
#include <string>

#include "voxmim/kernels/kernels.hpp"

namespace voxmim::kernels {
namespace {

std::atomic<const KernelTable<float>*> g_f32{nullptr};
std::atomic<const KernelTable<double>*> g_f64{nullptr};
std::string g_backend_name = "scalar";

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

void install(std::string_view name) {
#if defined(__x86_64__) || defined(_M_X64)
  if (name == "avx2") {
    g_f32.store(&f32_avx2());
    g_f64.store(&f64_avx2());
    g_backend_name = "avx2";
    return;
  }
#endif
  g_f32.store(&f32_scalar());
  g_f64.store(&f64_scalar());
  g_backend_name = "scalar";
}

void ensure_init() {
  if (g_f32.load() != nullptr) return;
  const char* env = std::getenv("VOXMIM_KERNELS");
  std::string_view want = env ? std::string_view(env) : std::string_view("auto");
  if (want == "avx2" || (want != "scalar" && cpu_has_avx2()))
    install("avx2");
  else
    install("scalar");
}

}  // namespace

const KernelTable<float>& f32() {
  ensure_init();
  return *g_f32.load();
}

const KernelTable<double>& f64() {
  ensure_init();
  return *g_f64.load();
}

bool avx2_available() { return cpu_has_avx2(); }

bool select_backend(std::string_view name) {
  if (name == "auto") {
    install(cpu_has_avx2() ? "avx2" : "scalar");
    return true;
  }
  if (name == "scalar") {
    install("scalar");
    return true;
  }
  if (name == "avx2") {
    if (!cpu_has_avx2()) return false;
    install("avx2");
    return true;
  }
  return false;
}

std::string_view active_backend() {
  ensure_init();
  return g_backend_name;
}

}  // namespace voxmim::kernels
