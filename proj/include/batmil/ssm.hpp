#pragma once

// Diagonal state-space sequence layer (S4D-style). Each of the d_model
// channels is an independent single-input single-output system sharing the
// continuous-time spectrum a_diag and input map b, with its own step size
// dt and output map c_out. Only one member of every conjugate pair of modes
// is stored; outputs take twice the real part.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "batmil/tensor.hpp"

namespace batmil::ssm {

using cplx = std::complex<double>;

struct SsmLayerParams {
  std::size_t n_state = 0;   // paired state size; n_state/2 modes are stored
  std::size_t d_model = 0;
  std::vector<cplx> a_diag;  // n_state/2, Re < 0
  std::vector<cplx> b;       // n_state/2
  Tensor c_re;               // d_model × n_state/2
  Tensor c_im;               // d_model × n_state/2
  Tensor dt;                 // 1 × d_model, > 0
  Tensor skip;               // 1 × d_model

  std::size_t modes() const { return n_state / 2; }
  /// Throws ConfigError if stability or shape invariants fail.
  void validate() const;
};

/// HiPPO-derived diagonal initialization: a_k = -1/2 + i*pi*k, b_k = 1,
/// c ~ N(0,1)/sqrt(n_state) per component, dt log-uniform in [1e-3, 1e-1].
/// Random draws are rounded to float32.
SsmLayerParams hippo_diag_init(std::size_t n_state, std::size_t d_model, std::uint64_t seed);

/// Rebuild the frozen spectrum for a given state size (a_diag, b).
void fill_hippo_spectrum(SsmLayerParams& params);

/// Zero-order-hold discretization of one channel.
struct DiscretePair {
  std::vector<cplx> a_bar;
  std::vector<cplx> b_bar;
};

DiscretePair discretize(std::span<const cplx> a, std::span<const cplx> b, double dt);
DiscretePair discretize(const SsmLayerParams& params, std::size_t channel);

/// One channel ready for evaluation.
struct DiscreteChannel {
  std::vector<cplx> a_bar;
  std::vector<cplx> b_bar;
  std::vector<cplx> c;
  double skip = 0.0;
};

DiscreteChannel discrete_channel(const SsmLayerParams& params, std::size_t channel);

/// K[l] = 2 Re( sum_k c_k b_bar_k a_bar_k^l ), l in [0, length).
std::vector<double> ssm_kernel(const DiscreteChannel& ch, std::size_t length);
std::vector<double> ssm_kernel(const SsmLayerParams& params, std::size_t channel, std::size_t length);

/// Recurrence oracle: h_l = a_bar*h_{l-1} + b_bar*u_l, y_l = 2 Re<c, h_l> + skip*u_l.
template <class T>
std::vector<T> recurrent_scan(std::span<const T> u, const DiscreteChannel& ch);

/// FFT causal convolution y_l = sum_{j<=l} K[j] u_{l-j} + skip*u_l.
/// Throws ShapeError unless u and kernel have equal length.
template <class T>
std::vector<T> conv_apply(std::span<const T> u, std::span<const T> kernel, T skip);

/// Convolution path for sequences longer than the kernel budget: the input
/// is processed in chunks of at most `chunk` with the recurrent state carried
/// between chunks. Matches recurrent_scan.
std::vector<double> conv_apply_chunked(std::span<const double> u, const DiscreteChannel& ch, std::size_t chunk);

}  // namespace batmil::ssm
