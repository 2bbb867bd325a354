#include "batmil/ssm.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "batmil/error.hpp"
#include "batmil/fft.hpp"
#include "batmil/rng.hpp"
#include "batmil/simd.hpp"

namespace batmil::ssm {

void SsmLayerParams::validate() const {
  if (n_state == 0 || n_state % 2 != 0) throw ConfigError("ssm: n_state must be positive and even");
  if (a_diag.size() != modes() || b.size() != modes()) throw ConfigError("ssm: spectrum size mismatch");
  for (const cplx& a : a_diag) {
    if (!(a.real() < 0.0)) throw ConfigError("ssm: Re(a_diag) must be negative");
  }
  if (c_re.rows != d_model || c_re.cols != modes() || !c_re.same_shape(c_im))
    throw ConfigError("ssm: c_out shape mismatch");
  if (dt.size() != d_model || skip.size() != d_model) throw ConfigError("ssm: per-channel vector size mismatch");
  for (double v : dt.data) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("ssm: dt must be positive");
  }
}

void fill_hippo_spectrum(SsmLayerParams& p) {
  p.a_diag.resize(p.modes());
  p.b.assign(p.modes(), cplx(1.0, 0.0));
  for (std::size_t k = 0; k < p.modes(); ++k) p.a_diag[k] = cplx(-0.5, std::numbers::pi * static_cast<double>(k));
}

SsmLayerParams hippo_diag_init(std::size_t n_state, std::size_t d_model, std::uint64_t seed) {
  if (n_state == 0 || n_state % 2 != 0) throw ConfigError("hippo_diag_init: n_state must be positive and even");
  if (d_model == 0) throw ConfigError("hippo_diag_init: d_model must be positive");
  SsmLayerParams p;
  p.n_state = n_state;
  p.d_model = d_model;
  fill_hippo_spectrum(p);

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double c_scale = 1.0 / std::sqrt(static_cast<double>(n_state));
  p.c_re = Tensor(d_model, p.modes());
  p.c_im = Tensor(d_model, p.modes());
  for (std::size_t i = 0; i < p.c_re.size(); ++i) {
    p.c_re.data[i] = normal(rng) * c_scale;
    p.c_im.data[i] = normal(rng) * c_scale;
  }
  p.dt = Tensor(1, d_model);
  const double log_lo = std::log(1e-3), log_hi = std::log(1e-1);
  for (double& v : p.dt.data) v = std::exp(log_lo + (log_hi - log_lo) * unit(rng));
  p.skip = Tensor(1, d_model);
  for (double& v : p.skip.data) v = normal(rng);
  round_to_float(p.c_re);
  round_to_float(p.c_im);
  round_to_float(p.dt);
  round_to_float(p.skip);
  return p;
}

DiscretePair discretize(std::span<const cplx> a, std::span<const cplx> b, double dt) {
  if (a.size() != b.size()) throw ShapeError("discretize: a and b differ in length");
  DiscretePair out;
  out.a_bar.resize(a.size());
  out.b_bar.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const cplx ab = std::exp(dt * a[k]);
    out.a_bar[k] = ab;
    // (exp(dt a) - 1)/a -> dt as a -> 0
    out.b_bar[k] = std::abs(a[k]) < 1e-12 ? dt * b[k] : (ab - 1.0) / a[k] * b[k];
  }
  return out;
}

DiscretePair discretize(const SsmLayerParams& params, std::size_t channel) {
  return discretize(params.a_diag, params.b, params.dt.data.at(channel));
}

DiscreteChannel discrete_channel(const SsmLayerParams& params, std::size_t channel) {
  DiscretePair d = discretize(params, channel);
  DiscreteChannel ch;
  ch.a_bar = std::move(d.a_bar);
  ch.b_bar = std::move(d.b_bar);
  ch.c.resize(params.modes());
  for (std::size_t k = 0; k < params.modes(); ++k) ch.c[k] = cplx(params.c_re(channel, k), params.c_im(channel, k));
  ch.skip = params.skip.data.at(channel);
  return ch;
}

std::vector<double> ssm_kernel(const DiscreteChannel& ch, std::size_t length) {
  if (length == 0) throw ShapeError("ssm_kernel: length must be >= 1");
  std::vector<cplx> w(ch.c.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = ch.c[k] * ch.b_bar[k];
  std::vector<double> out(length);
  simd::kernels().vandermonde(w.data(), ch.a_bar.data(), w.size(), out.data(), length);
  return out;
}

std::vector<double> ssm_kernel(const SsmLayerParams& params, std::size_t channel, std::size_t length) {
  return ssm_kernel(discrete_channel(params, channel), length);
}

template <class T>
std::vector<T> recurrent_scan(std::span<const T> u, const DiscreteChannel& ch) {
  using C = std::complex<T>;
  const std::size_t n = ch.c.size();
  std::vector<C> a(n), b(n), c(n), h(n, C(0));
  for (std::size_t k = 0; k < n; ++k) {
    a[k] = C(ch.a_bar[k]);
    b[k] = C(ch.b_bar[k]);
    c[k] = C(ch.c[k]);
  }
  const T skip = static_cast<T>(ch.skip);
  std::vector<T> y(u.size());
  for (std::size_t l = 0; l < u.size(); ++l) {
    T acc = T(0);
    for (std::size_t k = 0; k < n; ++k) {
      h[k] = a[k] * h[k] + b[k] * u[l];
      acc += c[k].real() * h[k].real() - c[k].imag() * h[k].imag();
    }
    y[l] = T(2) * acc + skip * u[l];
  }
  return y;
}

template std::vector<float> recurrent_scan<float>(std::span<const float>, const DiscreteChannel&);
template std::vector<double> recurrent_scan<double>(std::span<const double>, const DiscreteChannel&);

template <class T>
std::vector<T> conv_apply(std::span<const T> u, std::span<const T> kernel, T skip) {
  if (u.size() != kernel.size()) throw ShapeError("conv_apply: input and kernel lengths differ");
  std::vector<T> y = causal_conv_fft<T>(u, kernel);
  for (std::size_t l = 0; l < u.size(); ++l) y[l] += skip * u[l];
  return y;
}

template std::vector<float> conv_apply<float>(std::span<const float>, std::span<const float>, float);
template std::vector<double> conv_apply<double>(std::span<const double>, std::span<const double>, double);

std::vector<double> conv_apply_chunked(std::span<const double> u, const DiscreteChannel& ch, std::size_t chunk) {
  if (chunk == 0) throw ShapeError("conv_apply_chunked: chunk must be >= 1");
  const std::size_t n = ch.c.size();
  const std::size_t kernel_len = std::min(chunk, u.size());
  if (kernel_len == 0) return {};
  const std::vector<double> kernel = ssm_kernel(ch, kernel_len);

  std::vector<double> y(u.size());
  std::vector<cplx> state(n, cplx(0.0));  // h at the end of the previous chunk
  for (std::size_t start = 0; start < u.size(); start += chunk) {
    const std::size_t len = std::min(chunk, u.size() - start);
    std::span<const double> part = u.subspan(start, len);
    std::span<const double> k(kernel.data(), len);
    std::vector<double> part_y = conv_apply<double>(part, k, ch.skip);

    // Carried-state contribution: 2 Re sum_k c_k a_bar_k^{l+1} h_k.
    std::vector<cplx> p(n);
    for (std::size_t m = 0; m < n; ++m) p[m] = ch.c[m] * ch.a_bar[m] * state[m];
    for (std::size_t l = 0; l < len; ++l) {
      double acc = 0.0;
      for (std::size_t m = 0; m < n; ++m) {
        acc += p[m].real();
        p[m] *= ch.a_bar[m];
      }
      y[start + l] = part_y[l] + 2.0 * acc;
    }

    // Advance the state across this chunk.
    for (std::size_t m = 0; m < n; ++m) {
      cplx h = state[m];
      for (std::size_t l = 0; l < len; ++l) h = ch.a_bar[m] * h + ch.b_bar[m] * part[l];
      state[m] = h;
    }
  }
  return y;
}

}  // namespace batmil::ssm
