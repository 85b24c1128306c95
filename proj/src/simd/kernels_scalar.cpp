#include "rppd/simd/kernels.hpp"

namespace rppd::simd::detail {
namespace {

double dot_scalar(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

double squared_norm_scalar(const float* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(a[i]);
  return acc;
}

void dot_rows_scalar(const float* rows, std::size_t count, std::size_t dim, const float* query, double* out) {
  for (std::size_t r = 0; r < count; ++r) out[r] = dot_scalar(rows + r * dim, query, dim);
}

}  // namespace

const KernelTable kScalarTable = {&dot_scalar, &squared_norm_scalar, &dot_rows_scalar};

}  // namespace rppd::simd::detail
