#pragma once

// Projection and classification stage. The refined stack is flattened in
// layer order and projected, the generic embedding is projected separately,
// and the two projections are concatenated and classified:
//   c = W_context^T flatten(refined)      (P)
//   g = W_generic^T generic                (P)
//   O = softmax(W_classify^T [c | g])      (M)

#include <cstddef>
#include <random>

#include "bertil/autodiff.hpp"
#include "bertil/tensor.hpp"

namespace bertil {

template <class T>
struct HeadParams {
  Tensor<T> context;   // (L*C) x P
  Tensor<T> generic;   // G x P
  Tensor<T> classify;  // 2P x M

  std::size_t class_count() const noexcept { return classify.cols(); }
};

template <class T>
struct BoundHead {
  Var<T> context;
  Var<T> generic;
  Var<T> classify;
};

template <class T>
BoundHead<T> bind(Tape<T>& tape, const HeadParams<T>& p) {
  return {tape.parameter(p.context), tape.parameter(p.generic), tape.parameter(p.classify)};
}

/// Dropout configuration for one forward pass. The generator is only drawn
/// from in training mode with a nonzero rate.
struct DropoutState {
  double rate = 0.0;
  bool training = false;
  std::mt19937_64* rng = nullptr;

  static DropoutState eval() { return {}; }

  template <class T>
  Var<T> apply(Var<T> x) const {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return x;
    return ops::dropout(x, rate, true, *rng);
  }
};

template <class T>
Var<T> project_context(Var<T> refined, Var<T> w_context) {
  const Var<T> flat = ops::reshape(refined, {1, refined.value().size()});
  return ops::matmul(flat, w_context);
}

template <class T>
Var<T> project_generic(Var<T> generic, Var<T> w_generic) {
  const std::size_t expected = w_generic.value().rows();
  if (generic.value().size() != expected) {
    throw DimensionError("generic embedding has " + std::to_string(generic.value().size()) +
                         " components, expected " + std::to_string(expected));
  }
  return ops::matmul(ops::reshape(generic, {1, expected}), w_generic);
}

template <class T>
struct Classification {
  Var<T> logits;  // 1 x M
  Var<T> probs;   // 1 x M
};

template <class T>
Classification<T> classify(Var<T> context512, Var<T> generic512, Var<T> w_classify,
                           const DropoutState& dropout) {
  if (context512.value().size() != generic512.value().size()) {
    throw DimensionError("classify: projections " + shape_to_string(context512.shape()) +
                         " and " + shape_to_string(generic512.shape()) + " differ");
  }
  const Var<T> joined = dropout.apply(ops::concat({context512, generic512}, 1));
  const Var<T> logits = ops::matmul(joined, w_classify);
  return {logits, ops::softmax_rows(logits)};
}

template <class T>
Var<T> cross_entropy(Var<T> probs, std::size_t target) {
  return ops::cross_entropy(probs, target);
}

/// Plain-value cross entropy, -log(max(p[target], 1e-12)).
template <class T>
double cross_entropy(const Tensor<T>& probs, std::size_t target) {
  Tape<T> tape;
  return static_cast<double>(ops::cross_entropy(tape.input(probs), target).value()[0]);
}

}  // namespace bertil
