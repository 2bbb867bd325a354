#include <cstdlib>
#include <cstring>

#include "batmil/simd.hpp"

namespace batmil::simd {

const KernelTable& kernels() {
  static const KernelTable& selected = [] () -> const KernelTable& {
    const char* force = std::getenv("BATMIL_FORCE_SCALAR");
    if (force != nullptr && std::strcmp(force, "0") != 0) return scalar_kernels();
    if (const KernelTable* t = avx2_kernels()) return *t;
    return scalar_kernels();
  }();
  return selected;
}

}  // namespace batmil::simd
