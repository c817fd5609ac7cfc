#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bertil/errors.hpp"
#include "bertil/tensor.hpp"

namespace bertil {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators, one per parameter tensor.
template <class T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> first;
  std::vector<Tensor<T>> second;
  std::uint64_t step = 0;

  AdamState() = default;
  /// Zeroed moments shaped like each tensor in `params` (a range of
  /// pointers).
  template <class Range>
  explicit AdamState(const Range& params, AdamConfig cfg = {}) : config(cfg) {
    for (const auto* p : params) {
      first.emplace_back(p->shape());
      second.emplace_back(p->shape());
    }
  }
};

/// One bias-corrected Adam update. All gradients are checked for finiteness
/// before any parameter changes.
template <class T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads,
               AdamState<T>& state, double learning_rate,
               std::span<const std::string> names = {}) {
  if (params.size() != grads.size() || params.size() != state.first.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " +
                         std::to_string(state.first.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
    if (params[i]->shape() != grads[i]->shape() || params[i]->shape() != state.first[i].shape()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + name);
    }
    if (!grads[i]->all_finite()) {
      throw EvaluationError("adam_step: non-finite gradient for parameter " + name);
    }
  }
  ++state.step;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const Tensor<T>& g = *grads[i];
    Tensor<T>& m = state.first[i];
    Tensor<T>& v = state.second[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = c.beta1 * static_cast<double>(m[j]) + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * static_cast<double>(v[j]) + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = learning_rate * (mj / correct1) / (std::sqrt(vj / correct2) + c.epsilon);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - update);
    }
  }
}

}  // namespace bertil
