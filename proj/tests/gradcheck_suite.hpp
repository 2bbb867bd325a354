#pragma once

// Finite-difference checks of every differentiable primitive and of the
// tiny end-to-end model. Shared by the unit tests and the acceptance run.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "batmil/gradcheck.hpp"
#include "batmil/model.hpp"
#include "batmil/moe.hpp"
#include "batmil/ops.hpp"
#include "batmil/ssm.hpp"
#include "support.hpp"

namespace testsupport {

struct PrimitiveCheck {
  std::string name;
  batmil::ad::GradcheckResult result;
};

using PrimitiveFn =
    std::function<batmil::ad::Var(batmil::ad::Tape&, std::vector<batmil::ad::Var>&, std::vector<std::size_t>*)>;

/// Reduces the primitive's output with fixed random weights so every output
/// entry contributes with a different coefficient.
inline batmil::ad::GradcheckResult check_primitive(std::vector<batmil::Tensor>& inputs, const PrimitiveFn& f,
                                                   std::uint64_t seed) {
  using namespace batmil;
  auto weights = std::make_shared<Tensor>();
  ad::LossBuilder build = [&inputs, f, weights, seed](ad::Tape& t, std::vector<std::size_t>* sel) {
    std::vector<ad::Var> vars;
    for (const Tensor& in : inputs) vars.push_back(t.param(in));
    ad::Var out = f(t, vars, sel);
    const Tensor& ov = t.value(out);
    if (!weights->same_shape(ov)) {
      Rng rng = make_rng(seed, 0x77);
      *weights = random_tensor(ov.rows, ov.cols, rng);
    }
    return ops::dot_const(t, out, *weights);
  };
  std::vector<ad::CheckParam> params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.push_back({"in" + std::to_string(i), &inputs[i]});
  return ad::gradcheck(build, params);
}

inline std::vector<PrimitiveCheck> primitive_gradchecks(std::uint64_t seed) {
  using namespace batmil;
  using ad::Tape;
  using ad::Var;
  namespace geo = batmil::geometry;
  Rng rng = make_rng(seed);
  auto rt = [&](std::size_t r, std::size_t c, double s = 1.0) { return random_tensor(r, c, rng, s); };
  auto in_ball_rows = [&](std::size_t r, std::size_t c, double max_norm) {
    Tensor t(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      const auto v = in_ball(c, max_norm, rng);
      std::copy(v.begin(), v.end(), t.row(i).begin());
    }
    return t;
  };
  const geo::Curvature curv(0.1);
  std::vector<PrimitiveCheck> out;
  auto run = [&](const std::string& name, std::vector<Tensor> inputs, const PrimitiveFn& f) {
    out.push_back({name, check_primitive(inputs, f, seed + out.size())});
  };

  run("matmul", {rt(3, 4), rt(4, 2)}, [](Tape& t, auto& v, auto*) { return ops::matmul(t, v[0], v[1]); });
  run("add", {rt(3, 4), rt(3, 4)}, [](Tape& t, auto& v, auto*) { return ops::add(t, v[0], v[1]); });
  run("sub", {rt(3, 4), rt(3, 4)}, [](Tape& t, auto& v, auto*) { return ops::sub(t, v[0], v[1]); });
  run("mul", {rt(3, 4), rt(3, 4)}, [](Tape& t, auto& v, auto*) { return ops::mul(t, v[0], v[1]); });
  run("add_row", {rt(3, 4), rt(1, 4)}, [](Tape& t, auto& v, auto*) { return ops::add_row(t, v[0], v[1]); });
  run("mul_row", {rt(3, 4), rt(1, 4)}, [](Tape& t, auto& v, auto*) { return ops::mul_row(t, v[0], v[1]); });
  run("scale_rows", {rt(3, 4), rt(3, 1)}, [](Tape& t, auto& v, auto*) { return ops::scale_rows(t, v[0], v[1]); });
  run("mul_scalar", {rt(3, 4), rt(1, 1)}, [](Tape& t, auto& v, auto*) { return ops::mul_scalar(t, v[0], v[1]); });
  run("affine", {rt(3, 4)}, [](Tape& t, auto& v, auto*) { return ops::affine(t, v[0], -2.5, 1.0); });
  run("linear", {rt(3, 4), rt(4, 2), rt(1, 2)},
      [](Tape& t, auto& v, auto*) { return ops::linear(t, v[0], v[1], v[2]); });
  run("gelu", {rt(3, 4, 2.0)}, [](Tape& t, auto& v, auto*) { return ops::gelu(t, v[0]); });
  run("sigmoid", {rt(3, 4, 2.0)}, [](Tape& t, auto& v, auto*) { return ops::sigmoid(t, v[0]); });
  run("tanh", {rt(3, 4)}, [](Tape& t, auto& v, auto*) { return ops::tanh(t, v[0]); });
  run("softmax_rows", {rt(3, 4, 2.0)}, [](Tape& t, auto& v, auto*) { return ops::softmax_rows(t, v[0]); });
  run("layer_norm", {rt(3, 5), rt(1, 5), rt(1, 5)},
      [](Tape& t, auto& v, auto*) { return ops::layer_norm(t, v[0], v[1], v[2]); });
  run("sum_all", {rt(3, 4)}, [](Tape& t, auto& v, auto*) { return ops::sum_all(t, v[0]); });
  run("mean_rows", {rt(3, 4)}, [](Tape& t, auto& v, auto*) { return ops::mean_rows(t, v[0]); });
  run("concat_cols", {rt(3, 2), rt(3, 3)}, [](Tape& t, auto& v, auto*) { return ops::concat_cols(t, v[0], v[1]); });
  run("gather_rows", {rt(3, 4)}, [](Tape& t, auto& v, auto*) { return ops::gather_rows(t, v[0], {2, 0, 2}); });
  run("scatter_add_rows", {rt(2, 3), rt(2, 3)}, [](Tape& t, auto& v, auto*) {
    return ops::scatter_add_rows(t, {{v[0], {0, 2}}, {v[1], {2, 1}}}, 3, 3);
  });
  run("gather_entries", {rt(3, 4)},
      [](Tape& t, auto& v, auto*) { return ops::gather_entries(t, v[0], {{0, 1}, {2, 3}, {0, 1}}); });
  run("max_pool_rows", {rt(5, 4)}, [](Tape& t, auto& v, std::vector<std::size_t>* sel) {
    std::vector<std::size_t> arg;
    Var y = ops::max_pool_rows(t, v[0], &arg);
    if (sel) sel->insert(sel->end(), arg.begin(), arg.end());
    return y;
  });
  run("topk_weights", {rt(4, 5, 1.5)}, [](Tape& t, auto& v, std::vector<std::size_t>* sel) {
    Var p = ops::softmax_rows(t, v[0]);
    const Tensor& pv = t.value(p);
    std::vector<std::vector<std::size_t>> idx;
    for (std::size_t r = 0; r < pv.rows; ++r) {
      idx.push_back(moe::topk_renormalize(pv.row(r), 2).experts);
      if (sel) sel->insert(sel->end(), idx.back().begin(), idx.back().end());
    }
    return ops::topk_weights(t, p, idx);
  });
  run("dropout", {rt(3, 4)}, [](Tape& t, auto& v, auto*) {
    Rng r = make_rng(3);
    return ops::dropout(t, v[0], 0.3, true, r);
  });
  run("drop_path", {rt(3, 4)}, [](Tape& t, auto& v, auto*) {
    Rng r = make_rng(4);
    return ops::drop_path(t, v[0], 0.3, true, r);
  });
  run("cross_entropy", {rt(1, 4)}, [](Tape& t, auto& v, auto*) { return ops::cross_entropy(t, v[0], 2); });

  {
    const ssm::SsmLayerParams sp = ssm::hippo_diag_init(8, 3, seed);
    std::vector<ssm::DiscretePair> dyn;
    for (std::size_t ch = 0; ch < 3; ++ch) dyn.push_back(ssm::discretize(sp, ch));
    run("ssm_kernels", {sp.c_re, sp.c_im},
        [dyn](Tape& t, auto& v, auto*) { return ops::ssm_kernels(t, v[0], v[1], dyn, 12); });
    const Tensor skip = sp.skip;
    run("causal_conv_channels", {rt(8, 3), rt(3, 10)},
        [skip](Tape& t, auto& v, auto*) { return ops::causal_conv_channels(t, v[0], v[1], skip); });
  }

  run("exp_map0", {rt(3, 4)}, [curv](Tape& t, auto& v, auto*) { return ops::exp_map0(t, v[0], curv); });
  run("log_map0", {in_ball_rows(3, 4, 2.8)}, [curv](Tape& t, auto& v, auto*) { return ops::log_map0(t, v[0], curv); });
  run("mobius_add", {in_ball_rows(3, 4, 2.0), in_ball_rows(3, 4, 2.0)},
      [curv](Tape& t, auto& v, auto*) { return ops::mobius_add(t, v[0], v[1], curv); });
  {
    // One row inside the ball, one far outside (clamped).
    Tensor y = in_ball_rows(2, 4, 1.0);
    for (double& x : y.row(1)) x *= 20.0;
    run("project_to_ball", {y}, [curv](Tape& t, auto& v, std::vector<std::size_t>* sel) {
      std::vector<std::size_t> flags;
      Var out = ops::project_to_ball(t, v[0], curv, geo::kBallEps, &flags);
      if (sel) sel->insert(sel->end(), flags.begin(), flags.end());
      return out;
    });
  }
  run("ball_norm_distance", {in_ball_rows(3, 4, 2.8)},
      [curv](Tape& t, auto& v, auto*) { return ops::ball_norm_distance(t, v[0], curv); });
  run("hyp_distance", {in_ball_rows(3, 4, 2.0), in_ball_rows(3, 4, 2.0)},
      [curv](Tape& t, auto& v, auto*) { return ops::hyp_distance(t, v[0], v[1], curv); });
  return out;
}

/// Tiny end-to-end configuration: N=6, d_in=8, d_model=16, n_state=8, m=8, k=4.
inline batmil::model::ModelConfig gradcheck_config(batmil::model::FusionMode mode) {
  batmil::model::ModelConfig c;
  c.d_in = 8;
  c.d_model = 16;
  c.n_state = 8;
  c.fusion_dim = 8;
  c.k_experts = 4;
  c.top_k = 2;
  c.fusion_mode = mode;
  c.seed = 11;
  return c;
}

inline batmil::ad::GradcheckResult end_to_end_gradcheck(batmil::model::FusionMode mode, std::uint64_t seed) {
  using namespace batmil;
  model::BatmilParams params = model::init_model(gradcheck_config(mode));
  // Move the gate off its symmetric start so the hybrid branch gets a nonzero gradient.
  Rng rng = make_rng(seed);
  params.ghs.alpha_raw = random_tensor(1, params.ghs.alpha_raw.cols, rng, 0.5);
  const Tensor features = random_tensor(6, 8, rng);
  ad::LossBuilder build = [&](ad::Tape& t, std::vector<std::size_t>* sel) {
    model::ForwardTrace trace;
    Rng fr = make_rng(0);
    ad::Var logits = model::batmil_forward(t, features, params, Mode::eval, fr, &trace);
    if (sel) *sel = trace.selection;
    return ops::cross_entropy(t, logits, 1);
  };
  std::vector<ad::CheckParam> checked;
  for (const model::NamedTensor& nt : model::named_tensors(params)) {
    if (nt.trainable) checked.push_back({nt.name, nt.tensor});
  }
  return ad::gradcheck(build, checked);
}

}  // namespace testsupport
