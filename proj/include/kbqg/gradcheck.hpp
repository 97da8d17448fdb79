#pragma once

#include "kbqg/numdiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace kbqg::nd {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  std::size_t coordinates = 0;
};

/// Builds a scalar loss on the given tape from the current parameter values.
template <typename Scalar>
using LossFn = std::function<Var<Scalar>(Tape<Scalar>&)>;

/// Compares reverse-mode gradients against central differences
/// (f(x+eps) - f(x-eps)) / (2 eps) for every coordinate of `params`.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
/// `max_coords_per_param` > 0 subsamples large tensors with a fixed stride.
template <typename Scalar>
GradCheckResult grad_check(const LossFn<Scalar>& f, std::vector<Parameter<Scalar>*> params, double eps,
                           std::size_t max_coords_per_param = 0) {
  if (!(eps > 0)) throw ContractError("grad_check: eps must be positive");
  for (auto* p : params) p->zero_grad();
  {
    Tape<Scalar> tape;
    auto loss = f(tape);
    tape.backward(loss);
  }
  GradCheckResult res;
  auto eval = [&] {
    Tape<Scalar> tape(false);
    return f(tape).value()(0, 0);
  };
  for (auto* p : params) {
    const Eigen::Index n = p->value.size();
    Eigen::Index stride = 1;
    if (max_coords_per_param > 0 && static_cast<std::size_t>(n) > max_coords_per_param)
      stride = (n + static_cast<Eigen::Index>(max_coords_per_param) - 1) / static_cast<Eigen::Index>(max_coords_per_param);
    for (Eigen::Index i = 0; i < n; i += stride) {
      Scalar& x = p->value.data()[i];
      const Scalar orig = x;
      x = orig + static_cast<Scalar>(eps);
      const Scalar fp = eval();
      x = orig - static_cast<Scalar>(eps);
      const Scalar fm = eval();
      x = orig;
      const double numeric = static_cast<double>((fp - fm) / (2 * static_cast<Scalar>(eps)));
      const double analytic = static_cast<double>(p->grad.data()[i]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++res.coordinates;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p->name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace kbqg::nd
