#pragma once

// Sparse mixture-of-experts block:
//   x + DropPath( sum_{j in top-k} w_j * E_j(LN(x)) )
// with softmax gating on LN(x) and renormalized top-k weights.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "batmil/autograd.hpp"
#include "batmil/common.hpp"

namespace batmil::moe {

struct ExpertParams {
  Tensor w1;  // d_model × d_hidden
  Tensor b1;  // 1 × d_hidden
  Tensor w2;  // d_hidden × d_model
  Tensor b2;  // 1 × d_model
  double dropout_rate = 0.1;
};

struct MoeLayerParams {
  Tensor norm_gamma;  // 1 × d_model
  Tensor norm_beta;   // 1 × d_model
  Tensor gate_w;      // d_model × k
  std::vector<ExpertParams> experts;
  std::size_t top_k = 2;
  double drop_path_rate = 0.0;

  std::size_t k() const { return experts.size(); }
  std::size_t d_model() const { return gate_w.rows; }
  void validate() const;
};

/// Per-token routing decision.
struct RoutingRecord {
  std::vector<std::size_t> experts;  // top_k distinct indices, best first
  std::vector<double> weights;       // renormalized, sum 1
  std::vector<double> probs;         // full softmax, length k
};

MoeLayerParams init_moe(std::size_t d_model, std::size_t k, std::size_t top_k, std::size_t d_hidden, double dropout,
                        std::uint64_t seed);

/// Softmax of x·gate_w with max subtraction.
std::vector<double> gate_probs(std::span<const double> x_token, const Tensor& gate_w);

/// Keep the top_k largest probabilities (ties -> lower index) and divide by
/// their sum. Throws ConfigError if top_k is 0 or exceeds probs.size().
RoutingRecord topk_renormalize(std::span<const double> probs, std::size_t top_k);

/// w2 · dropout(GELU(w1 · x + b1)) + b2 for one token.
std::vector<double> expert_forward(std::span<const double> x_token, const ExpertParams& e, Mode mode, Rng& rng);

/// Diagnostics and knobs threaded through the taped block.
struct MoeTrace {
  std::vector<RoutingRecord> records;     // one per token, in token order
  std::size_t expert_token_evals = 0;     // rows pushed through any expert
  std::optional<std::size_t> forced_expert;  // route every token to this expert alone
  std::vector<std::size_t> selection;     // flattened expert ids (for flip detection)
  ad::Var aux_loss;                       // set when compute_aux is true
  bool compute_aux = false;
};

ad::Var moe_block(ad::Tape& tape, ad::Var x, const MoeLayerParams& params, Mode mode, Rng& rng, MoeTrace* trace = nullptr);

struct MoeOutput {
  Tensor y;
  std::vector<RoutingRecord> records;
};

MoeOutput moe_block_forward(const Tensor& x, const MoeLayerParams& params, Mode mode, Rng& rng);

struct LoadBalanceStats {
  std::vector<double> fraction;    // share of routed slots per expert, sums to top_k
  std::vector<double> importance;  // mean gate probability, sums to 1
  /// Switch-style auxiliary loss (k / top_k) * <fraction, importance>; 1 at perfect balance.
  double aux_loss = 0.0;
};

/// Throws DomainError on empty input.
LoadBalanceStats load_balance_stats(std::span<const RoutingRecord> records, std::size_t k);

}  // namespace batmil::moe
