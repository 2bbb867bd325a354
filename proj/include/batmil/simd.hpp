#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference
// implementation; an AVX2+FMA variant is selected at runtime when the CPU
// supports it. Setting BATMIL_FORCE_SCALAR=1 in the environment pins the
// scalar table.

#include <complex>
#include <cstddef>

namespace batmil::simd {

using cplx = std::complex<double>;

struct KernelTable {
  const char* name;

  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);

  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);

  // One radix-2 decimation-in-time stage over data[0, n): for every block
  // of 2*half, with lo = block, hi = block + half,
  //   t = hi[j] * tw[j]; hi[j] = lo[j] - t; lo[j] = lo[j] + t
  void (*fft_stage)(cplx* data, std::size_t n, const cplx* tw, std::size_t half);

  // out[l] = 2 * Re( sum_k w[k] * z[k]^l ), l in [0, len)
  void (*vandermonde)(const cplx* w, const cplx* z, std::size_t n, double* out, std::size_t len);
};

const KernelTable& scalar_kernels();

/// AVX2 table, or nullptr when the CPU (or the build) lacks AVX2/FMA.
const KernelTable* avx2_kernels();

/// Table picked once at first use.
const KernelTable& kernels();

}  // namespace batmil::simd
