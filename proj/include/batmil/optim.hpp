#pragma once

#include <cstddef>
#include <unordered_map>
#include <vector>

#include "batmil/autograd.hpp"
#include "batmil/model.hpp"

namespace batmil::optim {

/// Half-cycle cosine from base at epoch 0 to floor_frac·base at epoch total.
/// total = 0 returns base.
double cosine_lr(std::size_t epoch, std::size_t total, double base, double floor_frac = 0.1);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay. Parameters are rounded to float32
/// after every update so they stay exactly serializable.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every trainable tensor that has a gradient in `grads`,
  /// each gradient scaled by grad_scale first.
  void step(std::vector<model::NamedTensor>& params, const ad::GradMap& grads, double lr, double grad_scale = 1.0);

  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::unordered_map<const Tensor*, Moments> state_;
};

}  // namespace batmil::optim
