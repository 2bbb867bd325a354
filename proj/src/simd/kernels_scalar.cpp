#include <vector>

#include "batmil/simd.hpp"

namespace batmil::simd {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void fft_stage_scalar(cplx* data, std::size_t n, const cplx* tw, std::size_t half) {
  for (std::size_t start = 0; start < n; start += 2 * half) {
    cplx* lo = data + start;
    cplx* hi = lo + half;
    for (std::size_t j = 0; j < half; ++j) {
      const double hr = hi[j].real(), hiim = hi[j].imag();
      const double wr = tw[j].real(), wi = tw[j].imag();
      const double tr = hr * wr - hiim * wi;
      const double ti = hr * wi + hiim * wr;
      const double lr = lo[j].real(), li = lo[j].imag();
      hi[j] = cplx(lr - tr, li - ti);
      lo[j] = cplx(lr + tr, li + ti);
    }
  }
}

void vandermonde_scalar(const cplx* w, const cplx* z, std::size_t n, double* out, std::size_t len) {
  std::vector<cplx> p(w, w + n);
  for (std::size_t l = 0; l < len; ++l) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += p[k].real();
    out[l] = 2.0 * acc;
    for (std::size_t k = 0; k < n; ++k) {
      const double pr = p[k].real(), pi = p[k].imag();
      const double zr = z[k].real(), zi = z[k].imag();
      p[k] = cplx(pr * zr - pi * zi, pr * zi + pi * zr);
    }
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", dot_scalar, axpy_scalar, fft_stage_scalar, vandermonde_scalar};
  return table;
}

}  // namespace batmil::simd
