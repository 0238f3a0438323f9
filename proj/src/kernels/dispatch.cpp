#include "civdg/kernels/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace civdg::kernels {

#ifdef CIVDG_HAVE_AVX2
const Ops* avx2_ops_table();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && defined(__GNUC__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend resolve_auto() {
  if (avx2_ops() != nullptr) return Backend::kAvx2;
  return Backend::kScalar;
}

Backend initial_backend() {
  const char* env = std::getenv("CIVDG_KERNEL_BACKEND");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) return Backend::kScalar;
    if (std::strcmp(env, "avx2") == 0 && avx2_ops() != nullptr)
      return Backend::kAvx2;
  }
  return resolve_auto();
}

std::atomic<Backend> g_backend{initial_backend()};

}  // namespace

const Ops* avx2_ops() {
#ifdef CIVDG_HAVE_AVX2
  if (cpu_has_avx2()) return avx2_ops_table();
#endif
  return nullptr;
}

const Ops& active() {
  switch (g_backend.load(std::memory_order_relaxed)) {
    case Backend::kAvx2: {
      const Ops* t = avx2_ops();
      if (t != nullptr) return *t;
      return scalar_ops();
    }
    case Backend::kScalar:
      return scalar_ops();
    case Backend::kAuto:
    default:
      return avx2_ops() != nullptr ? *avx2_ops() : scalar_ops();
  }
}

void set_backend(Backend b) {
  if (b == Backend::kAuto) b = resolve_auto();
  if (b == Backend::kAvx2 && avx2_ops() == nullptr) b = Backend::kScalar;
  g_backend.store(b, std::memory_order_relaxed);
}

Backend active_backend() { return g_backend.load(std::memory_order_relaxed); }

std::string backend_name() {
  switch (g_backend.load(std::memory_order_relaxed)) {
    case Backend::kAvx2:
      return "avx2";
    case Backend::kScalar:
      return "scalar";
    default:
      return "auto";
  }
}

}  // namespace civdg::kernels
