#pragma once

#include "skelreid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace skelreid {

struct GradCheckResult {
  double max_relative_error = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t worst_param = 0;
  Index worst_index = 0;
  std::size_t coordinates_checked = 0;
  // Every coordinate, parameters in order; for reporting the error profile.
  std::vector<double> relative_errors;
  std::vector<double> analytic_gradients;
  std::vector<double> numeric_gradients;
};

/// |a - n| / max(1e-12, |a| + |n|)
inline double gradient_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}

/// Compares analytic gradients against central differences coordinate-wise.
///
/// `loss` evaluates the scalar objective at the current parameter values.
/// `backward` must leave d loss / d param in every `params[i]->grad`
/// (it is called once, after zeroing the grads).
template <typename Scalar>
GradCheckResult grad_check(const std::function<Scalar()>& loss, const std::function<void()>& backward,
                           const std::vector<ParamTensor<Scalar>*>& params, Scalar eps = Scalar(1e-6)) {
  for (auto* p : params) p->zero_grad();
  backward();

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ParamTensor<Scalar>& p = *params[pi];
    const Tensor<Scalar> analytic = p.grad;
    for (Index i = 0; i < p.value.size(); ++i) {
      const Scalar saved = p.value[i];
      p.value[i] = saved + eps;
      const Scalar up = loss();
      p.value[i] = saved - eps;
      const Scalar down = loss();
      p.value[i] = saved;
      const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * static_cast<double>(eps));
      const double err = gradient_relative_error(static_cast<double>(analytic[i]), numeric);
      ++result.coordinates_checked;
      result.relative_errors.push_back(err);
      result.analytic_gradients.push_back(static_cast<double>(analytic[i]));
      result.numeric_gradients.push_back(numeric);
      if (err > result.max_relative_error || result.coordinates_checked == 1) {
        result.max_relative_error = err;
        result.analytic_at_worst = static_cast<double>(analytic[i]);
        result.numeric_at_worst = numeric;
        result.worst_param = pi;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace skelreid
