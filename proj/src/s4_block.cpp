#include "batmil/s4_block.hpp"

#include "batmil/ops.hpp"

namespace batmil::ssm {

S4BlockParams init_s4_block(std::size_t d_model, std::size_t n_state, std::uint64_t seed) {
  S4BlockParams p;
  p.ssm = hippo_diag_init(n_state, d_model, mix_seed(seed, 1));
  p.norm_gamma = Tensor(1, d_model, 1.0);
  p.norm_beta = Tensor(1, d_model, 0.0);
  Rng rng = make_rng(seed, 2);
  p.mix_w = init_uniform(d_model, d_model, d_model, rng);
  p.mix_b = Tensor(1, d_model, 0.0);
  return p;
}

namespace {

ad::Var ssm_channels_chunked(ad::Tape& tape, ad::Var x, const SsmLayerParams& p, std::size_t chunk) {
  const Tensor& xv = tape.value(x);
  Tensor y(xv.rows, xv.cols);
  std::vector<double> col(xv.rows);
  for (std::size_t ch = 0; ch < xv.cols; ++ch) {
    for (std::size_t r = 0; r < xv.rows; ++r) col[r] = xv(r, ch);
    std::vector<double> out = conv_apply_chunked(col, discrete_channel(p, ch), chunk);
    for (std::size_t r = 0; r < xv.rows; ++r) y(r, ch) = out[r];
  }
  ad::Var c_re = tape.param(p.c_re);
  ad::Var c_im = tape.param(p.c_im);
  return tape.record_forward_only(std::move(y), {x, c_re, c_im}, "ssm_chunked");
}

}  // namespace

ad::Var s4_block(ad::Tape& tape, ad::Var x, const S4BlockParams& params, Mode mode, Rng& rng, std::size_t max_kernel_len) {
  const Tensor& xv = tape.value(x);
  if (xv.cols != params.d_model()) {
    throw ShapeError("s4_block: input width " + std::to_string(xv.cols) + " != d_model " + std::to_string(params.d_model()));
  }
  if (xv.rows == 0) throw DomainError("s4_block: empty sequence");
  const std::size_t n = xv.rows;

  ad::Var normed = ops::layer_norm(tape, x, tape.param(params.norm_gamma), tape.param(params.norm_beta));
  ad::Var seq;
  if (n <= max_kernel_len) {
    std::vector<DiscretePair> dyn;
    dyn.reserve(params.d_model());
    for (std::size_t ch = 0; ch < params.d_model(); ++ch) dyn.push_back(discretize(params.ssm, ch));
    ad::Var kernels = ops::ssm_kernels(tape, tape.param(params.ssm.c_re), tape.param(params.ssm.c_im), dyn, n);
    seq = ops::causal_conv_channels(tape, normed, kernels, params.ssm.skip);
  } else {
    seq = ssm_channels_chunked(tape, normed, params.ssm, max_kernel_len);
  }
  ad::Var act = ops::gelu(tape, seq);
  ad::Var mixed = ops::linear(tape, act, tape.param(params.mix_w), tape.param(params.mix_b));
  ad::Var branch = ops::drop_path(tape, mixed, params.drop_path_rate, is_training(mode), rng);
  return ops::add(tape, x, branch);
}

Tensor s4_block_forward(const Tensor& x, const S4BlockParams& params, Mode mode, Rng& rng, std::size_t max_kernel_len) {
  ad::Tape tape;
  ad::Var out = s4_block(tape, tape.constant(x), params, mode, rng, max_kernel_len);
  return tape.value(out);
}

}  // namespace batmil::ssm
