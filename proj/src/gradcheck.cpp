#include "batmil/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace batmil::ad {

GradcheckResult gradcheck(const LossBuilder& build, const std::vector<CheckParam>& params, double step, double floor) {
  GradMap grads;
  std::vector<std::size_t> base_sel;
  {
    Tape tape;
    Var loss = build(tape, &base_sel);
    tape.backward(loss, grads);
  }
  auto eval = [&](std::vector<std::size_t>& sel) {
    Tape tape;
    sel.clear();
    return tape.value(build(tape, &sel)).data.at(0);
  };

  GradcheckResult res;
  std::vector<std::size_t> sel;
  for (const CheckParam& p : params) {
    const Tensor* g = grads.find(*p.tensor);
    for (std::size_t i = 0; i < p.tensor->size(); ++i) {
      double& x = p.tensor->data[i];
      const double orig = x;
      x = orig + step;
      const double fp = eval(sel);
      const bool flip_p = sel != base_sel;
      x = orig - step;
      const double fm = eval(sel);
      const bool flip_m = sel != base_sel;
      x = orig;
      if (flip_p || flip_m) {
        ++res.skipped_flips;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = g != nullptr ? g->data[i] : 0.0;
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace batmil::ad
