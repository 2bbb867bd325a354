#include "batmil/optim.hpp"

#include <cmath>
#include <numbers>

namespace batmil::optim {

double cosine_lr(std::size_t epoch, std::size_t total, double base, double floor_frac) {
  if (total == 0) return base;
  if (epoch > total) throw ConfigError("cosine_lr: epoch exceeds total");
  if (epoch == total) return floor_frac * base;
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total);
  return base * (floor_frac + (1.0 - floor_frac) * (1.0 + std::cos(phase)) / 2.0);
}

void AdamW::step(std::vector<model::NamedTensor>& params, const ad::GradMap& grads, double lr, double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& nt : params) {
    if (!nt.trainable) continue;
    const Tensor* g = grads.find(*nt.tensor);
    if (g == nullptr) continue;
    Tensor& p = *nt.tensor;
    if (!g->same_shape(p)) throw ShapeError("adamw: gradient shape " + shape_str(*g) + " != parameter " + nt.name + " " + shape_str(p));
    Moments& st = state_[nt.tensor];
    if (st.m.empty()) {
      st.m.assign(p.size(), 0.0);
      st.v.assign(p.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g->data[i] * grad_scale;
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      p.data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.data[i]);
    }
    round_to_float(p);
  }
}

}  // namespace batmil::optim
