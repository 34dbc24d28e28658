#include <atomic>
#include <cstdlib>
#include <string_view>

#include "ibakit/kernels.hpp"

namespace ibakit::kernels {

#if defined(IBAKIT_HAVE_AVX2)
namespace avx2 {
extern const KernelTable kTable;
}
#endif
#if defined(IBAKIT_HAVE_NEON)
namespace neon {
extern const KernelTable kTable;
}
#endif

const KernelTable* avx2_table() {
#if defined(IBAKIT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &avx2::kTable : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_table() {
#if defined(IBAKIT_HAVE_NEON)
  return &neon::kTable;  // mandatory on aarch64
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return &scalar_table();
    case Isa::kAvx2: return avx2_table();
    case Isa::kNeon: return neon_table();
  }
  return nullptr;
}

const KernelTable* detect() {
  if (const char* env = std::getenv("IBAKIT_ISA"); env != nullptr) {
    if (std::string_view(env) == "scalar") return &scalar_table();
  }
  if (const KernelTable* t = avx2_table()) return t;
  if (const KernelTable* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{detect()};
  return current;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

bool force_isa(Isa isa) {
  const KernelTable* t = table_for(isa);
  if (t == nullptr) return false;
  slot().store(t, std::memory_order_release);
  return true;
}

}  // namespace ibakit::kernels
