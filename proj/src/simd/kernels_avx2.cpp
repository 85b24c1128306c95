// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "rppd/simd/kernels.hpp"

#include <immintrin.h>

namespace rppd::simd::detail {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

double dot_avx2(const float* a, const float* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 va = _mm256_loadu_ps(a + i);
    __m256 vb = _mm256_loadu_ps(b + i);
    __m256d a_lo = _mm256_cvtps_pd(_mm256_castps256_ps128(va));
    __m256d a_hi = _mm256_cvtps_pd(_mm256_extractf128_ps(va, 1));
    __m256d b_lo = _mm256_cvtps_pd(_mm256_castps256_ps128(vb));
    __m256d b_hi = _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1));
    acc0 = _mm256_fmadd_pd(a_lo, b_lo, acc0);
    acc1 = _mm256_fmadd_pd(a_hi, b_hi, acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

double squared_norm_avx2(const float* a, std::size_t n) { return dot_avx2(a, a, n); }

void dot_rows_avx2(const float* rows, std::size_t count, std::size_t dim, const float* query, double* out) {
  for (std::size_t r = 0; r < count; ++r) out[r] = dot_avx2(rows + r * dim, query, dim);
}

}  // namespace

const KernelTable kAvx2Table = {&dot_avx2, &squared_norm_avx2, &dot_rows_avx2};

}  // namespace rppd::simd::detail
