#include "batmil/fft.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <type_traits>
#include <unordered_map>

#include "batmil/error.hpp"
#include "batmil/simd.hpp"

namespace batmil {

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

template <class T>
FftPlan<T>::FftPlan(std::size_t n) : n_(n) {
  if (n == 0 || (n & (n - 1)) != 0) throw ShapeError("FftPlan: size must be a power of two");
  bitrev_.resize(n);
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1U) << (bits - 1 - b);
    bitrev_[i] = static_cast<std::uint32_t>(r);
  }
  tw_fwd_.resize(n > 1 ? n - 1 : 0);
  tw_inv_.resize(tw_fwd_.size());
  for (std::size_t half = 1; half < n; half <<= 1) {
    for (std::size_t j = 0; j < half; ++j) {
      const double angle = std::numbers::pi * static_cast<double>(j) / static_cast<double>(half);
      const double c = std::cos(angle), s = std::sin(angle);
      tw_fwd_[half - 1 + j] = std::complex<T>(static_cast<T>(c), static_cast<T>(-s));
      tw_inv_[half - 1 + j] = std::complex<T>(static_cast<T>(c), static_cast<T>(s));
    }
  }
}

template <class T>
void FftPlan<T>::transform(std::span<std::complex<T>> data, const std::vector<std::complex<T>>& tw) const {
  if (data.size() != n_) throw ShapeError("FftPlan: data length does not match plan size");
  for (std::size_t i = 0; i < n_; ++i) {
    const std::size_t r = bitrev_[i];
    if (i < r) std::swap(data[i], data[r]);
  }
  const simd::KernelTable& kt = simd::kernels();
  for (std::size_t half = 1; half < n_; half <<= 1) {
    const std::complex<T>* stage_tw = tw.data() + (half - 1);
    if constexpr (std::is_same_v<T, double>) {
      kt.fft_stage(data.data(), n_, stage_tw, half);
    } else {
      for (std::size_t start = 0; start < n_; start += 2 * half) {
        std::complex<T>* lo = data.data() + start;
        std::complex<T>* hi = lo + half;
        for (std::size_t j = 0; j < half; ++j) {
          const std::complex<T> t = hi[j] * stage_tw[j];
          hi[j] = lo[j] - t;
          lo[j] = lo[j] + t;
        }
      }
    }
  }
}

template <class T>
void FftPlan<T>::forward(std::span<std::complex<T>> data) const {
  transform(data, tw_fwd_);
}

template <class T>
void FftPlan<T>::inverse(std::span<std::complex<T>> data) const {
  transform(data, tw_inv_);
  const T scale = T(1) / static_cast<T>(n_);
  for (auto& v : data) v *= scale;
}

template class FftPlan<float>;
template class FftPlan<double>;

template <class T>
const FftPlan<T>& fft_plan(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<FftPlan<T>>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<FftPlan<T>>(n);
  return *slot;
}

template const FftPlan<float>& fft_plan<float>(std::size_t);
template const FftPlan<double>& fft_plan<double>(std::size_t);

template <class T>
std::vector<T> causal_conv_fft(std::span<const T> u, std::span<const T> k) {
  const std::size_t len = u.size();
  if (len == 0) return {};
  const std::size_t taps = std::min(k.size(), len);
  const std::size_t n = next_pow2(2 * len);
  const FftPlan<T>& plan = fft_plan<T>(n);

  // Scratch is reused across calls; fresh large allocations would page-fault every time.
  thread_local std::vector<std::complex<T>> scratch;
  scratch.resize(n);
  std::span<std::complex<T>> z(scratch.data(), n);

  // Pack both real inputs into one complex transform: z = u + i k. Roundoff from the larger
  // half leaks into the smaller one, so k is rescaled by a power of two to match u's norm.
  T su = 0, sk = 0;
  for (std::size_t i = 0; i < len; ++i) su += u[i] * u[i];
  for (std::size_t i = 0; i < taps; ++i) sk += k[i] * k[i];
  int shift = 0;
  if (su > T(0) && sk > T(0)) shift = std::ilogb(std::sqrt(su)) - std::ilogb(std::sqrt(sk));
  for (std::size_t i = 0; i < len; ++i)
    z[i] = std::complex<T>(u[i], i < taps ? std::ldexp(k[i], shift) : T(0));
  std::fill(z.begin() + static_cast<std::ptrdiff_t>(len), z.end(), std::complex<T>{});
  plan.forward(z);

  // U_j = (Z_j + conj Z_{n-j}) / 2 and K_j = (Z_j - conj Z_{n-j}) / 2i; overwrite each
  // (j, n-j) pair with the products U_j K_j and U_{n-j} K_{n-j}.
  auto product = [](std::complex<T> a, std::complex<T> b_conj) {
    const std::complex<T> uf = (a + b_conj) * T(0.5);
    const std::complex<T> d = (a - b_conj) * T(0.5);
    return uf * std::complex<T>(d.imag(), -d.real());
  };
  for (std::size_t j = 0; j <= n / 2; ++j) {
    const std::size_t m = (n - j) & (n - 1);
    const std::complex<T> a = z[j], b = z[m];
    z[j] = product(a, std::conj(b));
    if (m != j) z[m] = product(b, std::conj(a));
  }
  plan.inverse(z);

  std::vector<T> y(len);
  for (std::size_t i = 0; i < len; ++i) y[i] = std::ldexp(z[i].real(), -shift);
  return y;
}

template <class T>
std::vector<T> causal_corr_fft(std::span<const T> g, std::span<const T> v, std::size_t out_len) {
  // out[j] = sum_{l>=j} g[l] v[l-j] is the reversal of conv(reverse(g), v).
  const std::size_t len = g.size();
  std::vector<T> gr(g.rbegin(), g.rend());
  std::vector<T> vv(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(v.size(), len)));
  std::vector<T> c = causal_conv_fft<T>(gr, vv);
  std::vector<T> out(out_len, T(0));
  for (std::size_t j = 0; j < std::min(out_len, len); ++j) out[j] = c[len - 1 - j];
  return out;
}

template std::vector<float> causal_conv_fft<float>(std::span<const float>, std::span<const float>);
template std::vector<double> causal_conv_fft<double>(std::span<const double>, std::span<const double>);
template std::vector<float> causal_corr_fft<float>(std::span<const float>, std::span<const float>, std::size_t);
template std::vector<double> causal_corr_fft<double>(std::span<const double>, std::span<const double>, std::size_t);

}  // namespace batmil
