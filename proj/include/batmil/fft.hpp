#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace batmil {

std::size_t next_pow2(std::size_t n);

/// Iterative radix-2 complex FFT of a fixed power-of-two size.
template <class T>
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);

  std::size_t size() const { return n_; }
  void forward(std::span<std::complex<T>> data) const;
  /// Inverse transform, scaled by 1/n.
  void inverse(std::span<std::complex<T>> data) const;

 private:
  void transform(std::span<std::complex<T>> data, const std::vector<std::complex<T>>& twiddles) const;

  std::size_t n_;
  std::vector<std::uint32_t> bitrev_;
  // Stage twiddles concatenated: stage with half-size h occupies [h-1, 2h-1).
  std::vector<std::complex<T>> tw_fwd_;
  std::vector<std::complex<T>> tw_inv_;
};

/// Per-thread cached plan.
template <class T>
const FftPlan<T>& fft_plan(std::size_t n);

/// Causal linear convolution y[l] = sum_{j<=l} k[j] * u[l-j], l in [0, u.size()),
/// via a zero-padded FFT of length next_pow2(2L) with the tail discarded.
/// k may be shorter than u (missing taps are zero).
template <class T>
std::vector<T> causal_conv_fft(std::span<const T> u, std::span<const T> k);

/// Adjoint of causal_conv_fft in either argument:
/// out[j] = sum_{l>=j} g[l] * v[l-j], j in [0, out_len).
template <class T>
std::vector<T> causal_corr_fft(std::span<const T> g, std::span<const T> v, std::size_t out_len);

extern template class FftPlan<float>;
extern template class FftPlan<double>;

}  // namespace batmil
