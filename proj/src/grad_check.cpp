#include "memground/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "memground/errors.hpp"

namespace memground {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double h) {
  if (!(h >= 1e-5 && h <= 1e-2)) {
    throw InputError("grad_check: step h must lie in [1e-5, 1e-2]");
  }
  for (auto& p : params) p.zero_grad();
  clear_tape();
  Tensor out = f();
  if (!std::isfinite(out.item())) throw NumericError("grad_check: objective is not finite");
  backward(out);

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    Matrix& v = p.mutable_value();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      double* x = v.data() + i;
      const double orig = *x;
      *x = orig + h;
      const double fp = eval_scalar(f);
      *x = orig - h;
      const double fm = eval_scalar(f);
      *x = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = p.grad().data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = pi;
        res.worst_index = i;
        res.analytic = analytic;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace memground
