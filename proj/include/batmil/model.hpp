#pragma once

// Full bag classifier: input projection, cascaded S4 -> MoE blocks,
// max-pool over instances, hybrid Euclidean/hyperbolic head, linear
// classifier.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "batmil/autograd.hpp"
#include "batmil/common.hpp"
#include "batmil/geometry.hpp"
#include "batmil/moe.hpp"
#include "batmil/s4_block.hpp"

namespace batmil::model {

enum class FusionMode { weighted_add, concat, project };

std::string to_string(FusionMode m);
FusionMode parse_fusion_mode(const std::string& s);

struct ModelConfig {
  std::size_t d_in = 0;
  std::size_t d_model = 128;
  std::size_t n_blocks = 2;
  std::size_t n_state = 64;
  std::size_t k_experts = 4;
  std::size_t top_k = 2;
  std::size_t fusion_dim = 128;
  double curvature = 0.1;
  FusionMode fusion_mode = FusionMode::weighted_add;
  std::size_t n_classes = 2;
  std::size_t max_seq_len = 4096;
  std::uint64_t seed = 0;
  std::size_t hidden_mult = 4;
  double expert_dropout = 0.1;
  double drop_path_rate = 0.0;

  /// Small configuration used for the synthetic task and tests.
  static ModelConfig toy(std::size_t d_in);

  void validate() const;
  std::size_t classifier_width() const { return fusion_mode == FusionMode::concat ? 2 * fusion_dim : fusion_dim; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct GhsParams {
  Tensor w_e;        // d_model × m
  Tensor w_h;        // d_model × m
  Tensor alpha_raw;  // 1 × m, alpha = sigmoid(alpha_raw)
  double curvature = 0.1;
};

struct BagFeatures {
  Tensor features;  // N × d_in
  int label = -1;   // -1 = unlabeled
  std::string bag_id;
};

struct BatmilParams {
  ModelConfig config;
  Tensor in_w;  // d_in × d_model
  Tensor in_b;  // 1 × d_model
  std::vector<ssm::S4BlockParams> s4;
  std::vector<moe::MoeLayerParams> moe;
  GhsParams ghs;
  Tensor cls_w;  // classifier_width × n_classes
  Tensor cls_b;  // 1 × n_classes
};

BatmilParams init_model(const ModelConfig& config);

struct NamedTensor {
  std::string name;
  Tensor* tensor;
  bool trainable;
};

/// Every serialized tensor in a fixed order. Frozen entries (SSM step sizes
/// and skip terms) are listed with trainable = false.
std::vector<NamedTensor> named_tensors(BatmilParams& params);

// --- pooling and fusion ----------------------------------------------------

/// Per-column maximum and its row (ties -> lowest row). Throws DomainError
/// for an empty sequence.
std::pair<std::vector<double>, std::vector<std::size_t>> max_pool_slide(const Tensor& x);

ad::Var ghs_fuse(ad::Tape& tape, ad::Var h, const GhsParams& params, FusionMode mode,
                 std::vector<std::size_t>* selection = nullptr);
std::vector<double> ghs_fuse(std::span<const double> h, const GhsParams& params, FusionMode mode);

// --- forward ---------------------------------------------------------------

struct ForwardTrace {
  std::vector<moe::RoutingRecord> records;  // block-major, token order within a block
  std::vector<std::size_t> argmax;          // pooled-dimension winners
  std::vector<std::size_t> selection;       // routing + argmax + clamp flags
  std::size_t expert_token_evals = 0;
  std::optional<std::size_t> forced_expert;
  bool compute_aux = false;
  ad::Var aux_loss;
  ad::Var pooled;
  ad::Var logits;
};

/// Taped forward. In train mode sequences are truncated to max_seq_len;
/// in eval mode longer sequences run through the chunked SSM path.
ad::Var batmil_forward(ad::Tape& tape, const Tensor& features, const BatmilParams& params, Mode mode, Rng& rng,
                       ForwardTrace* trace = nullptr);

struct ForwardResult {
  std::vector<double> logits;
  std::vector<moe::RoutingRecord> records;
  std::vector<std::size_t> argmax;
};

ForwardResult batmil_forward(const BagFeatures& bag, const BatmilParams& params, Mode mode, Rng& rng,
                             std::optional<std::size_t> forced_expert = std::nullopt);

/// Max-pool provenance saliency: each pooled dimension's classifier
/// influence is credited to the instance that won it; scores sum to 1.
std::vector<double> saliency(const BagFeatures& bag, const BatmilParams& params);

}  // namespace batmil::model
