#pragma once

// Inner-loop arithmetic for similarity scoring and projection.
//
// Every kernel has a scalar reference implementation; vector variants
// (AVX2+FMA on x86-64, NEON on AArch64) are chosen once at runtime from the
// CPU features and may be overridden with RPPD_SIMD=scalar|avx2|neon|auto.
// All variants accumulate float32 inputs in float64. They agree with the
// scalar reference up to summation-order rounding, not bitwise.

#include <cstddef>
#include <span>
#include <string_view>

namespace rppd::simd {

enum class Backend { scalar, avx2, neon };

std::string_view to_string(Backend backend) noexcept;

struct KernelTable {
  // sum_i a[i] * b[i]
  double (*dot)(const float* a, const float* b, std::size_t n);
  // sum_i a[i] * a[i]
  double (*squared_norm)(const float* a, std::size_t n);
  // out[r] = dot(rows + r * dim, query) for r in [0, count)
  void (*dot_rows)(const float* rows, std::size_t count, std::size_t dim, const float* query, double* out);
};

// Compiled in and supported by the running CPU.
bool is_available(Backend backend) noexcept;

const KernelTable& table(Backend backend);

Backend active_backend() noexcept;
const KernelTable& active() noexcept;

// Throws Error{InvalidArgument} if the backend is unavailable. Intended for
// tests and benchmarks; not synchronized with concurrent kernel calls.
void set_active_backend(Backend backend);

// Re-runs detection (honours RPPD_SIMD).
void reset_active_backend();

inline double dot(std::span<const float> a, std::span<const float> b) noexcept {
  return active().dot(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

inline double squared_norm(std::span<const float> a) noexcept {
  return active().squared_norm(a.data(), a.size());
}

namespace detail {
extern const KernelTable kScalarTable;
#if defined(RPPD_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif
#if defined(RPPD_HAVE_NEON)
extern const KernelTable kNeonTable;
#endif
}  // namespace detail

}  // namespace rppd::simd
