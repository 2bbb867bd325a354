#include <cmath>
#include <complex>
#include <cstdlib>
#include <string>
#include <vector>

#include "batmil/simd.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace batmil;
using simd::cplx;

namespace {

const simd::KernelTable* vector_table() {
  const simd::KernelTable* t = simd::avx2_kernels();
  if (t == nullptr) MESSAGE("AVX2 unavailable; equivalence checks are skipped");
  return t;
}

std::vector<cplx> random_cplx(std::size_t n, Rng& rng) {
  auto re = testsupport::gaussian(n, rng), im = testsupport::gaussian(n, rng);
  std::vector<cplx> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = {re[i], im[i]};
  return v;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

}  // namespace

TEST_CASE("dispatch picks a table") {
  const std::string name = simd::kernels().name;
  CHECK((name == "scalar" || name == "avx2"));
  if (simd::avx2_kernels() != nullptr && std::getenv("BATMIL_FORCE_SCALAR") == nullptr) CHECK(name == "avx2");
}

TEST_CASE("scalar kernels against naive loops") {
  const auto& s = simd::scalar_kernels();
  Rng rng = make_rng(1);
  const auto x = testsupport::gaussian(37, rng), y = testsupport::gaussian(37, rng);
  double d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d += x[i] * y[i];
  CHECK(s.dot(x.data(), y.data(), x.size()) == doctest::Approx(d).epsilon(1e-14));

  // fft_stage with half = n/2 is one butterfly block.
  auto data = random_cplx(8, rng);
  const auto tw = random_cplx(4, rng);
  auto expect = data;
  for (std::size_t j = 0; j < 4; ++j) {
    const cplx t = expect[4 + j] * tw[j];
    expect[4 + j] = data[j] - t;
    expect[j] = data[j] + t;
  }
  s.fft_stage(data.data(), 8, tw.data(), 4);
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(data[i] - expect[i]) < 1e-14);

  // vandermonde: out[l] = 2 Re sum w z^l
  const auto w = random_cplx(3, rng);
  std::vector<cplx> z = {{0.9, 0.1}, {-0.5, 0.5}, {0.2, -0.7}};
  std::vector<double> out(6);
  s.vandermonde(w.data(), z.data(), 3, out.data(), 6);
  for (std::size_t l = 0; l < 6; ++l) {
    cplx acc = 0;
    for (std::size_t k = 0; k < 3; ++k) acc += w[k] * std::pow(z[k], static_cast<int>(l));
    CHECK(out[l] == doctest::Approx(2.0 * acc.real()).epsilon(1e-13));
  }
}

TEST_CASE("property: AVX2 kernels match the scalar reference") {
  const simd::KernelTable* v = vector_table();
  if (v == nullptr) return;
  const auto& s = simd::scalar_kernels();
  Rng rng = make_rng(2);
  for (std::size_t n : {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 100, 1023}) {
    const auto x = testsupport::gaussian(n, rng), y0 = testsupport::gaussian(n, rng);
    CHECK(rel(v->dot(x.data(), y0.data(), n), s.dot(x.data(), y0.data(), n)) <= 1e-12);

    auto ys = y0, yv = y0;
    s.axpy(0.37, x.data(), ys.data(), n);
    v->axpy(0.37, x.data(), yv.data(), n);
    CHECK(testsupport::max_abs_diff(ys, yv) <= 1e-14);
  }
  for (std::size_t n : {2, 4, 8, 64, 1024}) {
    for (std::size_t half = 1; half < n; half <<= 1) {
      auto a = random_cplx(n, rng);
      auto b = a;
      const auto tw = random_cplx(half, rng);
      s.fft_stage(a.data(), n, tw.data(), half);
      v->fft_stage(b.data(), n, tw.data(), half);
      double m = 0;
      for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(a[i] - b[i]));
      CHECK(m <= 1e-13);
    }
  }
  for (std::size_t modes : {1, 2, 3, 8, 17, 32}) {
    const auto w = random_cplx(modes, rng);
    auto z = random_cplx(modes, rng);
    for (auto& q : z) q *= 0.95 / std::max(1.0, std::abs(q));
    std::vector<double> a(300), b(300);
    s.vandermonde(w.data(), z.data(), modes, a.data(), a.size());
    v->vandermonde(w.data(), z.data(), modes, b.data(), b.size());
    CHECK(testsupport::max_abs_diff(a, b) <= 1e-12);
  }
}
