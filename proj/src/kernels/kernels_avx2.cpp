// Compiled with -mavx2. Only reached through avx2_table() after a CPUID check.
#include <immintrin.h>

#include "ibakit/kernels.hpp"

namespace ibakit::kernels::avx2 {
namespace {

void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
              const double* b, double* c) {
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const __m256d va = _mm256_set1_pd(aip);
      const double* brow = b + p * n;
      std::size_t j = 0;
      for (; j < n4; j += 4) {
        __m256d vc = _mm256_loadu_pd(crow + j);
        vc = _mm256_add_pd(vc, _mm256_mul_pd(va, _mm256_loadu_pd(brow + j)));
        _mm256_storeu_pd(crow + j, vc);
      }
      for (; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename VecOp, typename ScalarOp>
inline void binary(std::size_t n, const double* x, const double* y, double* out,
                   VecOp vop, ScalarOp sop) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, vop(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = sop(x[i], y[i]);
}

void add(std::size_t n, const double* x, const double* y, double* out) {
  binary(n, x, y, out, [](__m256d u, __m256d v) { return _mm256_add_pd(u, v); },
         [](double u, double v) { return u + v; });
}

void sub(std::size_t n, const double* x, const double* y, double* out) {
  binary(n, x, y, out, [](__m256d u, __m256d v) { return _mm256_sub_pd(u, v); },
         [](double u, double v) { return u - v; });
}

void mul(std::size_t n, const double* x, const double* y, double* out) {
  binary(n, x, y, out, [](__m256d u, __m256d v) { return _mm256_mul_pd(u, v); },
         [](double u, double v) { return u * v; });
}

void mul_acc(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(out + i), prod));
  }
  for (; i < n; ++i) out[i] += x[i] * y[i];
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale(std::size_t n, double alpha, const double* x, double* out) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) out[i] = alpha * x[i];
}

}  // namespace

extern const KernelTable kTable;
const KernelTable kTable{Isa::kAvx2, "avx2", gemm_acc, add, sub, mul, mul_acc, axpy, scale};

}  // namespace ibakit::kernels::avx2
