#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bertil/autodiff.hpp"
#include "bertil/errors.hpp"

namespace bertil {

struct GradientCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_parameter = 0;
  std::size_t worst_element = 0;
  std::size_t elements_checked = 0;
};

/// Denominator floor for the relative error. Below it the comparison is
/// effectively absolute, which keeps round-off on near-zero gradients from
/// registering as large relative errors.
inline constexpr double kGradientCheckFloor = 1e-3;

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(p+eps) - f(p-eps)) / 2eps for every element of `params`.
///
/// `f(tape, leaves)` must rebuild the whole computation on `tape` from the
/// parameter leaves and return a one-element Var. It is called once for the
/// analytic pass and twice per element afterwards, so it must be
/// deterministic (dropout disabled or its generator reseeded inside `f`).
template <class F>
GradientCheckResult check_gradients(F&& f, std::span<Tensor<double>* const> params,
                                    double eps = 1e-5) {
  auto evaluate = [&](bool with_backward, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    leaves.reserve(params.size());
    for (Tensor<double>* p : params) leaves.push_back(tape.parameter(*p));
    Var<double> out = f(tape, std::span<const Var<double>>(leaves));
    if (out.value().size() != 1) {
      throw DimensionError("check_gradients: function must return a scalar");
    }
    const double value = out.value()[0];
    if (!std::isfinite(value)) {
      throw EvaluationError("check_gradients: function value is not finite");
    }
    if (with_backward) {
      tape.backward(out);
      for (const Var<double>& leaf : leaves) grads->push_back(leaf.grad());
    }
    return value;
  };

  std::vector<Tensor<double>> analytic;
  evaluate(true, &analytic);

  GradientCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& p = *params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + eps;
      const double up = evaluate(false, nullptr);
      p[i] = saved - eps;
      const double down = evaluate(false, nullptr);
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err =
          abs_err / std::max({std::abs(a), std::abs(numeric), kGradientCheckFloor});
      result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
      if (rel_err > result.max_relative_error) {
        result.max_relative_error = rel_err;
        result.worst_parameter = pi;
        result.worst_element = i;
      }
      ++result.elements_checked;
    }
  }
  return result;
}

template <class F>
GradientCheckResult check_gradients(F&& f, std::vector<Tensor<double>*> params,
                                    double eps = 1e-5) {
  return check_gradients(std::forward<F>(f),
                         std::span<Tensor<double>* const>(params), eps);
}

}  // namespace bertil
