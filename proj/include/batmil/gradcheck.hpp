#pragma once

// Central finite-difference verification of tape gradients.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "batmil/autograd.hpp"

namespace batmil::ad {

struct CheckParam {
  std::string name;
  Tensor* tensor;
};

/// Builds a scalar loss on a fresh tape, binding the checked tensors with
/// tape.param(). `selection` receives any discrete choices (routing,
/// argmax, clamp flags); a probe that changes them is skipped.
using LossBuilder = std::function<Var(Tape& tape, std::vector<std::size_t>* selection)>;

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "name[i]"
  std::size_t checked = 0;
  std::size_t skipped_flips = 0;
};

/// rel = |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradcheckResult gradcheck(const LossBuilder& build, const std::vector<CheckParam>& params, double step = 1e-4,
                          double floor = 1e-3);

}  // namespace batmil::ad
