#include <vector>

#include "batmil/simd.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define BATMIL_HAVE_X86 1
#include <immintrin.h>
#else
#define BATMIL_HAVE_X86 0
#endif

namespace batmil::simd {

#if BATMIL_HAVE_X86
namespace {

#define BATMIL_AVX2 __attribute__((target("avx2,fma")))

// Two packed complex products: [a0 a1] * [b0 b1], layout (re, im, re, im).
BATMIL_AVX2 inline __m256d cmul2(__m256d a, __m256d b) {
  const __m256d b_re = _mm256_movedup_pd(b);         // br br
  const __m256d b_im = _mm256_permute_pd(b, 0xF);    // bi bi
  const __m256d a_sw = _mm256_permute_pd(a, 0x5);    // ai ar
  return _mm256_fmaddsub_pd(a, b_re, _mm256_mul_pd(a_sw, b_im));
}

BATMIL_AVX2 double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  acc0 = _mm256_add_pd(acc0, acc1);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc0);
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

BATMIL_AVX2 void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

BATMIL_AVX2 void fft_stage_avx2(cplx* data, std::size_t n, const cplx* tw, std::size_t half) {
  if (half == 1) {
    // Pairs of adjacent elements; same arithmetic as the scalar kernel.
    const double wr = tw[0].real(), wi = tw[0].imag();
    for (std::size_t start = 0; start < n; start += 2) {
      const double hr = data[start + 1].real(), hiim = data[start + 1].imag();
      const double tr = hr * wr - hiim * wi;
      const double ti = hr * wi + hiim * wr;
      const double lr = data[start].real(), li = data[start].imag();
      data[start + 1] = cplx(lr - tr, li - ti);
      data[start] = cplx(lr + tr, li + ti);
    }
    return;
  }
  auto* pw = reinterpret_cast<const double*>(tw);
  for (std::size_t start = 0; start < n; start += 2 * half) {
    auto* pl = reinterpret_cast<double*>(data + start);
    auto* ph = pl + 2 * half;
    for (std::size_t j = 0; j < half; j += 2) {
      const __m256d t = cmul2(_mm256_loadu_pd(ph + 2 * j), _mm256_loadu_pd(pw + 2 * j));
      const __m256d l = _mm256_loadu_pd(pl + 2 * j);
      _mm256_storeu_pd(ph + 2 * j, _mm256_sub_pd(l, t));
      _mm256_storeu_pd(pl + 2 * j, _mm256_add_pd(l, t));
    }
  }
}

BATMIL_AVX2 void vandermonde_avx2(const cplx* w, const cplx* z, std::size_t n, double* out, std::size_t len) {
  std::vector<cplx> p(w, w + n);
  auto* pp = reinterpret_cast<double*>(p.data());
  auto* pz = reinterpret_cast<const double*>(z);
  const std::size_t n2 = n & ~std::size_t{1};
  for (std::size_t l = 0; l < len; ++l) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t k = 0; k < n2; k += 2) {
      const __m256d pk = _mm256_loadu_pd(pp + 2 * k);
      acc = _mm256_add_pd(acc, pk);
      _mm256_storeu_pd(pp + 2 * k, cmul2(pk, _mm256_loadu_pd(pz + 2 * k)));
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    double s = lanes[0] + lanes[2];
    if (n2 < n) {
      s += p[n2].real();
      p[n2] *= z[n2];
    }
    out[l] = 2.0 * s;
  }
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  static const KernelTable table{"avx2", dot_avx2, axpy_avx2, fft_stage_avx2, vandermonde_avx2};
  return supported ? &table : nullptr;
}

#else

const KernelTable* avx2_kernels() { return nullptr; }

#endif

}  // namespace batmil::simd
