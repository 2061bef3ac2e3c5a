#pragma once

#include <functional>
#include <span>
#include <string>

#include "memground/tensor.hpp"

namespace memground {

struct GradCheckResult {
  double max_rel_error = 0.0;
  // Location of the worst coordinate, for diagnostics.
  std::size_t worst_param = 0;
  Eigen::Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients of the scalar `f` against central
// differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of
// every tensor in `params`. The relative error per coordinate uses the
// denominator max(|analytic|, |numeric|, 1e-8).
//
// `f` must rebuild its graph from `params` on every call and be a pure
// function of their values. Existing grads on `params` are overwritten.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                           double h = 1e-3);

}  // namespace memground
