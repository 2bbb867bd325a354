#pragma once

// Differentiable primitives recorded on an ad::Tape. Shapes are given as
// rows×cols; "n×m" inputs are sequences of n tokens of width m.

#include <cstddef>
#include <utility>
#include <vector>

#include "batmil/autograd.hpp"
#include "batmil/geometry.hpp"
#include "batmil/rng.hpp"
#include "batmil/ssm.hpp"

namespace batmil::ops {

using ad::Tape;
using ad::Var;

// --- linear algebra -------------------------------------------------------
Var matmul(Tape& t, Var x, Var w);             // n×k · k×m
Var add(Tape& t, Var a, Var b);                // same shape
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);                // elementwise
Var add_row(Tape& t, Var x, Var row);          // n×m + 1×m
Var mul_row(Tape& t, Var x, Var row);          // n×m ⊙ 1×m
Var scale_rows(Tape& t, Var x, Var s);         // n×m ⊙ n×1
Var mul_scalar(Tape& t, Var x, Var s);         // n×m · 1×1
Var affine(Tape& t, Var x, double a, double b);  // a*x + b
Var linear(Tape& t, Var x, Var w, Var bias);   // x·w + bias

// --- pointwise nonlinearities ---------------------------------------------
Var gelu(Tape& t, Var x);  // tanh approximation
Var sigmoid(Tape& t, Var x);
Var tanh(Tape& t, Var x);

// --- normalization --------------------------------------------------------
Var softmax_rows(Tape& t, Var x);
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);

// --- reductions / reshaping -----------------------------------------------
Var sum_all(Tape& t, Var x);
Var mean_rows(Tape& t, Var x);                           // n×m -> 1×m
Var dot_const(Tape& t, Var x, const Tensor& weights);   // <x, w> -> 1×1
Var concat_cols(Tape& t, Var a, Var b);                 // n×p, n×q -> n×(p+q)
Var gather_rows(Tape& t, Var x, std::vector<std::size_t> rows);
/// Sum of row blocks scattered into an n_rows×m result.
Var scatter_add_rows(Tape& t, const std::vector<std::pair<Var, std::vector<std::size_t>>>& parts,
                     std::size_t n_rows, std::size_t cols);
/// Single entries x(r, c) -> |entries|×1.
Var gather_entries(Tape& t, Var x, std::vector<std::pair<std::size_t, std::size_t>> entries);

/// Column-wise maximum over rows; ties resolve to the lowest row index.
/// The gradient flows only to the winning row of each column.
Var max_pool_rows(Tape& t, Var x, std::vector<std::size_t>* argmax = nullptr);

/// Renormalize the selected probabilities of each row:
/// w(r, j) = p(r, idx[r][j]) / sum_j p(r, idx[r][j]). The index set is a
/// constant for differentiation.
Var topk_weights(Tape& t, Var probs, const std::vector<std::vector<std::size_t>>& idx);

// --- stochastic regularizers (identity when rate == 0 or !training) -------
Var dropout(Tape& t, Var x, double rate, bool training, Rng& rng);
/// Drops the whole branch with probability rate; survivors scaled by 1/(1-rate).
Var drop_path(Tape& t, Var x, double rate, bool training, Rng& rng);

// --- losses ---------------------------------------------------------------
Var cross_entropy(Tape& t, Var logits, std::size_t label);  // 1×C -> 1×1

// --- sequence model -------------------------------------------------------
/// Convolution kernels of every channel from trainable output maps:
/// K(ch, l) = 2 Re sum_k (c_re + i c_im)(ch, k) * b_bar_k(ch) * a_bar_k(ch)^l.
/// The discretized dynamics are frozen constants.
Var ssm_kernels(Tape& t, Var c_re, Var c_im, const std::vector<ssm::DiscretePair>& dynamics, std::size_t length);

/// Per-channel causal convolution of an n×d sequence with d×L kernels
/// (L >= n) plus a frozen skip term.
Var causal_conv_channels(Tape& t, Var x, Var kernels, const Tensor& skip);

// --- Poincare ball (row-wise) ---------------------------------------------
Var exp_map0(Tape& t, Var v, geometry::Curvature c);
Var log_map0(Tape& t, Var y, geometry::Curvature c);
Var mobius_add(Tape& t, Var x, Var y, geometry::Curvature c);
/// Clamp each row to norm <= (1-eps)/sqrt(c). `clamped` receives one flag per row.
Var project_to_ball(Tape& t, Var y, geometry::Curvature c, double eps = geometry::kBallEps,
                    std::vector<std::size_t>* clamped = nullptr);
/// (2/sqrt(c)) artanh(sqrt(c) |row|) -> n×1, the distance of each row from the origin.
Var ball_norm_distance(Tape& t, Var y, geometry::Curvature c);
/// Row-wise D_hyp(x, y) via -x (+)_c y.
Var hyp_distance(Tape& t, Var x, Var y, geometry::Curvature c);

}  // namespace batmil::ops
