#pragma once

#include <cstddef>
#include <string_view>

// Dense float64 inner loops behind the tensor ops. Every ISA variant performs
// the same per-element operation sequence as the scalar reference (no FMA, no
// reassociated reductions), so results are bitwise identical across variants.
namespace ibakit::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

struct KernelTable {
  Isa isa;
  std::string_view name;

  // c[m x n] += a[m x k] * b[k x n], row-major. Each c element accumulates
  // over k in increasing order.
  void (*gemm_acc)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                   const double* b, double* c);
  // out = x + y, x - y, x * y (elementwise, out may alias x or y)
  void (*add)(std::size_t n, const double* x, const double* y, double* out);
  void (*sub)(std::size_t n, const double* x, const double* y, double* out);
  void (*mul)(std::size_t n, const double* x, const double* y, double* out);
  // out += x * y
  void (*mul_acc)(std::size_t n, const double* x, const double* y, double* out);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  // out = alpha * x
  void (*scale)(std::size_t n, double alpha, const double* x, double* out);
};

const KernelTable& scalar_table();

// nullptr when the variant is not compiled in or the CPU lacks support.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// Best table for this CPU. IBAKIT_ISA=scalar in the environment forces the
// reference path.
const KernelTable& active();

// Overrides the dispatch choice; returns false if the ISA is unavailable.
bool force_isa(Isa isa);

}  // namespace ibakit::kernels
