#include "batmil/model.hpp"

#include <algorithm>
#include <cmath>

#include "batmil/ops.hpp"

namespace batmil::model {

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::weighted_add: return "weighted_add";
    case FusionMode::concat: return "concat";
    case FusionMode::project: return "project";
  }
  return "?";
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "weighted_add") return FusionMode::weighted_add;
  if (s == "concat") return FusionMode::concat;
  if (s == "project") return FusionMode::project;
  throw ConfigError("unknown fusion_mode '" + s + "' (expected weighted_add, concat or project)");
}

ModelConfig ModelConfig::toy(std::size_t d_in) {
  ModelConfig c;
  c.d_in = d_in;
  c.d_model = 32;
  c.fusion_dim = 32;
  c.n_state = 16;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("config: ") + name + " must be positive");
  };
  positive(d_in, "d_in");
  positive(d_model, "d_model");
  positive(n_blocks, "n_blocks");
  positive(n_state, "n_state");
  positive(k_experts, "k_experts");
  positive(top_k, "top_k");
  positive(fusion_dim, "fusion_dim");
  positive(n_classes, "n_classes");
  positive(max_seq_len, "max_seq_len");
  positive(hidden_mult, "hidden_mult");
  if (n_state % 2 != 0) throw ConfigError("config: n_state must be even");
  if (top_k > k_experts) throw ConfigError("config: top_k must not exceed k_experts");
  if (!(curvature > 0.0) || !std::isfinite(curvature)) throw ConfigError("config: curvature must be > 0");
  if (!(expert_dropout >= 0.0 && expert_dropout < 1.0)) throw ConfigError("config: expert_dropout must be in [0,1)");
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) throw ConfigError("config: drop_path_rate must be in [0,1)");
}

BatmilParams init_model(const ModelConfig& config) {
  config.validate();
  BatmilParams p;
  p.config = config;
  const std::size_t d = config.d_model, m = config.fusion_dim;
  Rng rng = make_rng(config.seed, 100);
  p.in_w = init_uniform(config.d_in, d, config.d_in, rng);
  p.in_b = Tensor(1, d, 0.0);
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    ssm::S4BlockParams s4 = ssm::init_s4_block(d, config.n_state, mix_seed(config.seed, 200, b));
    s4.drop_path_rate = config.drop_path_rate;
    p.s4.push_back(std::move(s4));
    moe::MoeLayerParams mp = moe::init_moe(d, config.k_experts, config.top_k, config.hidden_mult * d,
                                           config.expert_dropout, mix_seed(config.seed, 300, b));
    mp.drop_path_rate = config.drop_path_rate;
    p.moe.push_back(std::move(mp));
  }
  Rng ghs_rng = make_rng(config.seed, 400);
  p.ghs.w_e = init_uniform(d, m, d, ghs_rng);
  p.ghs.w_h = init_uniform(d, m, d, ghs_rng);
  p.ghs.alpha_raw = Tensor(1, m, 0.0);
  p.ghs.curvature = config.curvature;
  Rng cls_rng = make_rng(config.seed, 500);
  p.cls_w = init_uniform(config.classifier_width(), config.n_classes, config.classifier_width(), cls_rng);
  p.cls_b = Tensor(1, config.n_classes, 0.0);
  return p;
}

std::vector<NamedTensor> named_tensors(BatmilParams& p) {
  std::vector<NamedTensor> out;
  out.push_back({"input.w", &p.in_w, true});
  out.push_back({"input.b", &p.in_b, true});
  for (std::size_t b = 0; b < p.s4.size(); ++b) {
    const std::string s = "block" + std::to_string(b) + ".s4.";
    auto& s4 = p.s4[b];
    out.push_back({s + "norm.gamma", &s4.norm_gamma, true});
    out.push_back({s + "norm.beta", &s4.norm_beta, true});
    out.push_back({s + "c_re", &s4.ssm.c_re, true});
    out.push_back({s + "c_im", &s4.ssm.c_im, true});
    out.push_back({s + "dt", &s4.ssm.dt, false});
    out.push_back({s + "skip", &s4.ssm.skip, false});
    out.push_back({s + "mix.w", &s4.mix_w, true});
    out.push_back({s + "mix.b", &s4.mix_b, true});
    const std::string m = "block" + std::to_string(b) + ".moe.";
    auto& mo = p.moe[b];
    out.push_back({m + "norm.gamma", &mo.norm_gamma, true});
    out.push_back({m + "norm.beta", &mo.norm_beta, true});
    out.push_back({m + "gate.w", &mo.gate_w, true});
    for (std::size_t j = 0; j < mo.experts.size(); ++j) {
      const std::string e = m + "expert" + std::to_string(j) + ".";
      out.push_back({e + "w1", &mo.experts[j].w1, true});
      out.push_back({e + "b1", &mo.experts[j].b1, true});
      out.push_back({e + "w2", &mo.experts[j].w2, true});
      out.push_back({e + "b2", &mo.experts[j].b2, true});
    }
  }
  out.push_back({"ghs.w_e", &p.ghs.w_e, true});
  out.push_back({"ghs.w_h", &p.ghs.w_h, true});
  out.push_back({"ghs.alpha_raw", &p.ghs.alpha_raw, true});
  out.push_back({"classifier.w", &p.cls_w, true});
  out.push_back({"classifier.b", &p.cls_b, true});
  return out;
}

std::pair<std::vector<double>, std::vector<std::size_t>> max_pool_slide(const Tensor& x) {
  ad::Tape tape;
  std::vector<std::size_t> arg;
  ad::Var y = ops::max_pool_rows(tape, tape.constant(x), &arg);
  return {tape.value(y).data, std::move(arg)};
}

ad::Var ghs_fuse(ad::Tape& tape, ad::Var h, const GhsParams& params, FusionMode mode, std::vector<std::size_t>* selection) {
  const geometry::Curvature c(params.curvature);
  ad::Var z_e = ops::matmul(tape, h, tape.param(params.w_e));
  ad::Var v = ops::matmul(tape, h, tape.param(params.w_h));
  ad::Var v_in = ops::project_to_ball(tape, v, c, geometry::kBallEps, selection);
  ad::Var z_h = ops::project_to_ball(tape, ops::exp_map0(tape, v_in, c), c, geometry::kBallEps, selection);
  switch (mode) {
    case FusionMode::weighted_add: {
      ad::Var tangent = ops::log_map0(tape, z_h, c);
      ad::Var alpha = ops::sigmoid(tape, tape.param(params.alpha_raw));
      ad::Var euclid = ops::mul_row(tape, z_e, alpha);
      ad::Var hyper = ops::mul_row(tape, tangent, ops::affine(tape, alpha, -1.0, 1.0));
      return ops::add(tape, euclid, hyper);
    }
    case FusionMode::concat:
      return ops::concat_cols(tape, z_e, ops::log_map0(tape, z_h, c));
    case FusionMode::project: {
      const Tensor& zv = tape.value(z_h);
      ad::Var origin = tape.constant(Tensor(zv.rows, zv.cols));
      return ops::mul_scalar(tape, z_e, ops::hyp_distance(tape, origin, z_h, c));
    }
  }
  throw ConfigError("ghs_fuse: unknown fusion mode");
}

std::vector<double> ghs_fuse(std::span<const double> h, const GhsParams& params, FusionMode mode) {
  if (h.size() != params.w_e.rows) throw ShapeError("ghs_fuse: feature width does not match projections");
  ad::Tape tape;
  return tape.value(ghs_fuse(tape, tape.constant(Tensor::row_vector(h)), params, mode)).data;
}

ad::Var batmil_forward(ad::Tape& tape, const Tensor& features, const BatmilParams& params, Mode mode, Rng& rng,
                       ForwardTrace* trace) {
  const ModelConfig& cfg = params.config;
  if (features.rows == 0) throw DomainError("batmil_forward: empty bag");
  if (features.cols != cfg.d_in) {
    throw ShapeError("batmil_forward: bag width " + std::to_string(features.cols) + " != d_in " + std::to_string(cfg.d_in));
  }
  ad::Var x;
  if (is_training(mode) && features.rows > cfg.max_seq_len) {
    Tensor head(cfg.max_seq_len, features.cols,
                std::vector<double>(features.data.begin(),
                                    features.data.begin() + static_cast<std::ptrdiff_t>(cfg.max_seq_len * features.cols)));
    x = tape.constant(std::move(head));
  } else {
    x = tape.constant(features);
  }

  x = ops::linear(tape, x, tape.param(params.in_w), tape.param(params.in_b));
  moe::MoeTrace moe_trace;
  if (trace != nullptr) {
    moe_trace.forced_expert = trace->forced_expert;
    moe_trace.compute_aux = trace->compute_aux;
  }
  for (std::size_t b = 0; b < params.s4.size(); ++b) {
    x = ssm::s4_block(tape, x, params.s4[b], mode, rng, cfg.max_seq_len);
    x = moe::moe_block(tape, x, params.moe[b], mode, rng, &moe_trace);
  }
  std::vector<std::size_t> argmax;
  ad::Var pooled = ops::max_pool_rows(tape, x, &argmax);
  std::vector<std::size_t> clamp_flags;
  ad::Var fused = ghs_fuse(tape, pooled, params.ghs, cfg.fusion_mode, &clamp_flags);
  ad::Var logits = ops::linear(tape, fused, tape.param(params.cls_w), tape.param(params.cls_b));

  if (trace != nullptr) {
    trace->records = std::move(moe_trace.records);
    trace->expert_token_evals = moe_trace.expert_token_evals;
    trace->aux_loss = moe_trace.aux_loss;
    trace->selection = std::move(moe_trace.selection);
    trace->selection.insert(trace->selection.end(), argmax.begin(), argmax.end());
    trace->selection.insert(trace->selection.end(), clamp_flags.begin(), clamp_flags.end());
    trace->argmax = std::move(argmax);
    trace->pooled = pooled;
    trace->logits = logits;
  }
  return logits;
}

ForwardResult batmil_forward(const BagFeatures& bag, const BatmilParams& params, Mode mode, Rng& rng,
                             std::optional<std::size_t> forced_expert) {
  ad::Tape tape;
  ForwardTrace trace;
  trace.forced_expert = forced_expert;
  ad::Var logits = batmil_forward(tape, bag.features, params, mode, rng, &trace);
  return ForwardResult{tape.value(logits).data, std::move(trace.records), std::move(trace.argmax)};
}

std::vector<double> saliency(const BagFeatures& bag, const BatmilParams& params) {
  ForwardTrace trace;
  Tensor pooled;
  {
    ad::Tape tape;
    Rng rng(0);
    batmil_forward(tape, bag.features, params, Mode::eval, rng, &trace);
    pooled = tape.value(trace.pooled);
  }

  // Differentiate the head alone with the pooled vector as a leaf.
  ad::Tape head;
  ad::Var leaf = head.param(pooled);
  ad::Var fused = ghs_fuse(head, leaf, params.ghs, params.config.fusion_mode);
  ad::Var logits = ops::linear(head, fused, head.param(params.cls_w, false), head.param(params.cls_b, false));
  const Tensor& lv = head.value(logits);
  const std::size_t n_classes = lv.cols;
  const std::size_t pred = static_cast<std::size_t>(std::max_element(lv.data.begin(), lv.data.end()) - lv.data.begin());
  Tensor coef(1, n_classes, -1.0 / static_cast<double>(n_classes));
  coef.data[pred] += 1.0;
  ad::GradMap grads;
  head.backward(ops::dot_const(head, logits, coef), grads);
  const Tensor* influence = grads.find(pooled);

  const std::size_t n = bag.features.rows;
  std::vector<double> score(n, 0.0);
  double total = 0.0;
  for (std::size_t d = 0; d < trace.argmax.size(); ++d) {
    const double w = influence != nullptr ? std::abs(influence->data[d]) : 0.0;
    score[trace.argmax[d]] += w;
    total += w;
  }
  if (total <= 0.0) {
    std::fill(score.begin(), score.end(), 0.0);
    for (std::size_t winner : trace.argmax) score[winner] += 1.0;
    total = static_cast<double>(trace.argmax.size());
  }
  for (double& s : score) s /= total;
  return score;
}

}  // namespace batmil::model
