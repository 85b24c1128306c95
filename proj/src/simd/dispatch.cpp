#include <atomic>
#include <cstdlib>
#include <string>

#include "rppd/error.hpp"
#include "rppd/simd/kernels.hpp"

namespace rppd::simd {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(RPPD_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect() noexcept {
  const char* env = std::getenv("RPPD_SIMD");
  std::string choice = env ? env : "auto";
  if (choice == "scalar") return Backend::scalar;
  if (choice == "avx2" && is_available(Backend::avx2)) return Backend::avx2;
  if (choice == "neon" && is_available(Backend::neon)) return Backend::neon;
  if (is_available(Backend::avx2)) return Backend::avx2;
  if (is_available(Backend::neon)) return Backend::neon;
  return Backend::scalar;
}

std::atomic<Backend>& current() noexcept {
  static std::atomic<Backend> backend{detect()};
  return backend;
}

}  // namespace

std::string_view to_string(Backend backend) noexcept {
  switch (backend) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "scalar";
}

bool is_available(Backend backend) noexcept {
  switch (backend) {
    case Backend::scalar: return true;
    case Backend::avx2: return cpu_has_avx2();
    case Backend::neon:
#if defined(RPPD_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Backend backend) {
  if (!is_available(backend))
    throw Error(Errc::InvalidArgument, "SIMD backend '" + std::string(to_string(backend)) + "' is not available");
  switch (backend) {
#if defined(RPPD_HAVE_AVX2)
    case Backend::avx2: return detail::kAvx2Table;
#endif
#if defined(RPPD_HAVE_NEON)
    case Backend::neon: return detail::kNeonTable;
#endif
    default: return detail::kScalarTable;
  }
}

Backend active_backend() noexcept { return current().load(std::memory_order_relaxed); }

const KernelTable& active() noexcept {
  switch (active_backend()) {
#if defined(RPPD_HAVE_AVX2)
    case Backend::avx2: return detail::kAvx2Table;
#endif
#if defined(RPPD_HAVE_NEON)
    case Backend::neon: return detail::kNeonTable;
#endif
    default: return detail::kScalarTable;
  }
}

void set_active_backend(Backend backend) {
  table(backend);
  current().store(backend, std::memory_order_relaxed);
}

void reset_active_backend() { current().store(detect(), std::memory_order_relaxed); }

}  // namespace rppd::simd
