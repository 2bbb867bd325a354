#include "batmil/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "batmil/ops.hpp"

namespace batmil::moe {

void MoeLayerParams::validate() const {
  if (experts.empty()) throw ConfigError("moe: at least one expert required");
  if (top_k == 0 || top_k > experts.size()) throw ConfigError("moe: top_k must be in [1, k]");
  if (gate_w.cols != experts.size()) throw ConfigError("moe: gate width does not match expert count");
  for (const ExpertParams& e : experts) {
    if (e.w1.rows != d_model() || e.w2.cols != d_model() || e.w1.cols != e.w2.rows || e.w1.cols == 0)
      throw ConfigError("moe: expert shape mismatch");
  }
}

MoeLayerParams init_moe(std::size_t d_model, std::size_t k, std::size_t top_k, std::size_t d_hidden, double dropout,
                        std::uint64_t seed) {
  if (k == 0 || top_k == 0 || top_k > k) throw ConfigError("init_moe: need 1 <= top_k <= k");
  if (d_hidden == 0) throw ConfigError("init_moe: d_hidden must be >= 1");
  MoeLayerParams p;
  p.norm_gamma = Tensor(1, d_model, 1.0);
  p.norm_beta = Tensor(1, d_model, 0.0);
  Rng rng = make_rng(seed, 0);
  p.gate_w = init_uniform(d_model, k, d_model, rng);
  p.top_k = top_k;
  for (std::size_t j = 0; j < k; ++j) {
    Rng er = make_rng(seed, 1, j);
    ExpertParams e;
    e.w1 = init_uniform(d_model, d_hidden, d_model, er);
    e.b1 = Tensor(1, d_hidden, 0.0);
    e.w2 = init_uniform(d_hidden, d_model, d_hidden, er);
    e.b2 = Tensor(1, d_model, 0.0);
    e.dropout_rate = dropout;
    p.experts.push_back(std::move(e));
  }
  return p;
}

std::vector<double> gate_probs(std::span<const double> x_token, const Tensor& gate_w) {
  if (x_token.size() != gate_w.rows) throw ShapeError("gate_probs: token width does not match gate");
  ad::Tape tape;
  ad::Var logits = ops::matmul(tape, tape.constant(Tensor::row_vector(x_token)), tape.param(gate_w, false));
  return tape.value(ops::softmax_rows(tape, logits)).data;
}

RoutingRecord topk_renormalize(std::span<const double> probs, std::size_t top_k) {
  if (top_k == 0 || top_k > probs.size()) {
    throw ConfigError("topk_renormalize: top_k=" + std::to_string(top_k) + " with k=" + std::to_string(probs.size()));
  }
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  RoutingRecord rec;
  rec.experts.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top_k));
  rec.probs.assign(probs.begin(), probs.end());
  double sum = 0.0;
  for (std::size_t j : rec.experts) sum += probs[j];
  for (std::size_t j : rec.experts) rec.weights.push_back(probs[j] / sum);
  return rec;
}

namespace {

ad::Var expert_apply(ad::Tape& tape, ad::Var x, const ExpertParams& e, Mode mode, Rng& rng) {
  ad::Var h = ops::gelu(tape, ops::linear(tape, x, tape.param(e.w1), tape.param(e.b1)));
  h = ops::dropout(tape, h, e.dropout_rate, is_training(mode), rng);
  return ops::linear(tape, h, tape.param(e.w2), tape.param(e.b2));
}

}  // namespace

std::vector<double> expert_forward(std::span<const double> x_token, const ExpertParams& e, Mode mode, Rng& rng) {
  if (x_token.size() != e.w1.rows) throw ShapeError("expert_forward: token width does not match w1");
  ad::Tape tape;
  return tape.value(expert_apply(tape, tape.constant(Tensor::row_vector(x_token)), e, mode, rng)).data;
}

ad::Var moe_block(ad::Tape& tape, ad::Var x, const MoeLayerParams& params, Mode mode, Rng& rng, MoeTrace* trace) {
  const Tensor& xv = tape.value(x);
  if (xv.cols != params.d_model()) {
    throw ShapeError("moe_block: input width " + std::to_string(xv.cols) + " != d_model " + std::to_string(params.d_model()));
  }
  const std::size_t n = xv.rows, d = xv.cols, k = params.k();
  if (params.top_k == 0 || params.top_k > k) throw ConfigError("moe_block: top_k must be in [1, k]");

  ad::Var normed = ops::layer_norm(tape, x, tape.param(params.norm_gamma), tape.param(params.norm_beta));
  ad::Var probs = ops::softmax_rows(tape, ops::matmul(tape, normed, tape.param(params.gate_w)));
  const Tensor& pv = tape.value(probs);

  // Routing is a constant index set for differentiation.
  std::vector<std::vector<std::size_t>> idx(n);
  std::vector<RoutingRecord> records;
  records.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (trace != nullptr && trace->forced_expert) {
      const std::size_t j = *trace->forced_expert;
      if (j >= k) throw ConfigError("moe_block: forced expert out of range");
      RoutingRecord rec;
      rec.experts = {j};
      rec.weights = {1.0};
      rec.probs.assign(pv.row(r).begin(), pv.row(r).end());
      records.push_back(std::move(rec));
    } else {
      records.push_back(topk_renormalize(pv.row(r), params.top_k));
    }
    idx[r] = records.back().experts;
  }
  ad::Var weights = ops::topk_weights(tape, probs, idx);

  std::vector<std::pair<ad::Var, std::vector<std::size_t>>> parts;
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<std::size_t> rows;
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t s = 0; s < idx[r].size(); ++s) {
        if (idx[r][s] == j) {
          rows.push_back(r);
          slots.emplace_back(r, s);
        }
      }
    }
    if (rows.empty()) continue;
    ad::Var sub = ops::gather_rows(tape, normed, rows);
    ad::Var out = expert_apply(tape, sub, params.experts[j], mode, rng);
    if (trace != nullptr) trace->expert_token_evals += rows.size();
    ad::Var w = ops::gather_entries(tape, weights, std::move(slots));
    parts.emplace_back(ops::scale_rows(tape, out, w), std::move(rows));
  }
  ad::Var mixture = ops::scatter_add_rows(tape, parts, n, d);
  ad::Var branch = ops::drop_path(tape, mixture, params.drop_path_rate, is_training(mode), rng);

  if (trace != nullptr) {
    for (const auto& list : idx) trace->selection.insert(trace->selection.end(), list.begin(), list.end());
    if (trace->compute_aux && n > 0) {
      LoadBalanceStats stats = load_balance_stats(records, k);
      Tensor coef(1, k);
      const double scale = static_cast<double>(k) / static_cast<double>(params.top_k);
      for (std::size_t j = 0; j < k; ++j) coef.data[j] = scale * stats.fraction[j];
      ad::Var aux = ops::dot_const(tape, ops::mean_rows(tape, probs), coef);
      trace->aux_loss = trace->aux_loss.valid() ? ops::add(tape, trace->aux_loss, aux) : aux;
    }
    trace->records.insert(trace->records.end(), std::make_move_iterator(records.begin()),
                          std::make_move_iterator(records.end()));
  }
  return ops::add(tape, x, branch);
}

MoeOutput moe_block_forward(const Tensor& x, const MoeLayerParams& params, Mode mode, Rng& rng) {
  ad::Tape tape;
  MoeTrace trace;
  ad::Var y = moe_block(tape, tape.constant(x), params, mode, rng, &trace);
  return MoeOutput{tape.value(y), std::move(trace.records)};
}

LoadBalanceStats load_balance_stats(std::span<const RoutingRecord> records, std::size_t k) {
  if (records.empty()) throw DomainError("load_balance_stats: no routing records");
  LoadBalanceStats s;
  s.fraction.assign(k, 0.0);
  s.importance.assign(k, 0.0);
  const double inv = 1.0 / static_cast<double>(records.size());
  std::size_t top_k = 0;
  for (const RoutingRecord& r : records) {
    if (r.probs.size() != k) throw ShapeError("load_balance_stats: record width does not match k");
    for (std::size_t j : r.experts) s.fraction[j] += inv;
    for (std::size_t j = 0; j < k; ++j) s.importance[j] += r.probs[j] * inv;
    top_k = std::max(top_k, r.experts.size());
  }
  double dotp = 0.0;
  for (std::size_t j = 0; j < k; ++j) dotp += s.fraction[j] * s.importance[j];
  s.aux_loss = top_k == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(top_k) * dotp;
  return s;
}

}  // namespace batmil::moe
