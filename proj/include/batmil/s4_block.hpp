#pragma once

#include <cstddef>
#include <cstdint>

#include "batmil/autograd.hpp"
#include "batmil/common.hpp"
#include "batmil/ssm.hpp"

namespace batmil::ssm {

/// x + DropPath(Mix(GELU(SSM(LN(x))))).
struct S4BlockParams {
  Tensor norm_gamma;  // 1 × d_model
  Tensor norm_beta;   // 1 × d_model
  SsmLayerParams ssm;
  Tensor mix_w;       // d_model × d_model
  Tensor mix_b;       // 1 × d_model
  double drop_path_rate = 0.0;

  std::size_t d_model() const { return ssm.d_model; }
};

S4BlockParams init_s4_block(std::size_t d_model, std::size_t n_state, std::uint64_t seed);

/// Taped block. Sequences longer than `max_kernel_len` run through the
/// chunked carried-state path, which is forward-only.
ad::Var s4_block(ad::Tape& tape, ad::Var x, const S4BlockParams& params, Mode mode, Rng& rng,
                 std::size_t max_kernel_len = 4096);

Tensor s4_block_forward(const Tensor& x, const S4BlockParams& params, Mode mode, Rng& rng,
                        std::size_t max_kernel_len = 4096);

}  // namespace batmil::ssm
