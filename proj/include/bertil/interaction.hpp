#pragma once

// Multi-head self-attention interaction layer over one aspect's stack of
// per-layer contextual embeddings.
//
// For a stack X (L x C) and head h with projections Wq, Wk, Wv (C x d):
//   alpha_h = softmax_rows((X Wq)(X Wk)^T / sqrt(d))          (L x L)
//   head_h  = alpha_h (X Wv)                                   (L x d)
//   refined = ReLU([head_1 | ... | head_H] + X W_residual)     (L x C)
// Attention only mixes the L rows of a single stack.

#include <cmath>
#include <span>
#include <vector>

#include "bertil/autodiff.hpp"
#include "bertil/tensor.hpp"

namespace bertil {

template <class T>
struct InteractionHeadParams {
  Tensor<T> query;  // C x d
  Tensor<T> key;    // C x d
  Tensor<T> value;  // C x d
};

template <class T>
struct InteractionLayerParams {
  std::vector<InteractionHeadParams<T>> heads;
  Tensor<T> residual;  // C x C
};

template <class T>
struct BoundInteractionHead {
  Var<T> query;
  Var<T> key;
  Var<T> value;
};

template <class T>
struct BoundInteractionLayer {
  std::vector<BoundInteractionHead<T>> heads;
  Var<T> residual;
};

template <class T>
BoundInteractionHead<T> bind(Tape<T>& tape, const InteractionHeadParams<T>& p) {
  return {tape.parameter(p.query), tape.parameter(p.key), tape.parameter(p.value)};
}

template <class T>
BoundInteractionLayer<T> bind(Tape<T>& tape, const InteractionLayerParams<T>& p) {
  BoundInteractionLayer<T> out;
  out.heads.reserve(p.heads.size());
  for (const auto& h : p.heads) out.heads.push_back(bind(tape, h));
  out.residual = tape.parameter(p.residual);
  return out;
}

/// L x L attention matrix of one head; row m is a distribution over k.
template <class T>
Var<T> attention_weights(Var<T> stack, Var<T> query, Var<T> key) {
  const Var<T> q = ops::matmul(stack, query);
  const Var<T> k = ops::matmul(stack, key);
  const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(query.value().cols()));
  const Var<T> scores = ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt_d);
  return ops::softmax_rows(scores);
}

template <class T>
Var<T> attention_weights(Var<T> stack, const BoundInteractionHead<T>& head) {
  return attention_weights(stack, head.query, head.key);
}

/// Row m = sum_k alpha(m, k) * (Wv^T c_k).
template <class T>
Var<T> apply_head(Var<T> stack, Var<T> value, Var<T> alpha) {
  return ops::matmul(alpha, ops::matmul(stack, value));
}

template <class T>
Var<T> refine_stack(Var<T> stack, const BoundInteractionLayer<T>& layer) {
  std::vector<Var<T>> head_outputs;
  head_outputs.reserve(layer.heads.size());
  for (const auto& h : layer.heads) {
    head_outputs.push_back(apply_head(stack, h.value, attention_weights(stack, h)));
  }
  const Var<T> joined = ops::concat(std::span<const Var<T>>(head_outputs), 1);
  if (joined.value().cols() != stack.value().cols()) {
    throw DimensionError("concatenated heads are " + shape_to_string(joined.shape()) +
                         " but the stack is " + shape_to_string(stack.shape()));
  }
  return ops::relu(ops::add(joined, ops::matmul(stack, layer.residual)));
}

// Tensor-level conveniences; each builds and discards a private tape.

template <class T>
Tensor<T> attention_weights(const Tensor<T>& stack, const InteractionHeadParams<T>& head) {
  Tape<T> tape;
  return attention_weights(tape.input(stack), tape.input(head.query), tape.input(head.key))
      .value();
}

template <class T>
Tensor<T> apply_head(const Tensor<T>& stack, const InteractionHeadParams<T>& head,
                     const Tensor<T>& alpha) {
  Tape<T> tape;
  return apply_head(tape.input(stack), tape.input(head.value), tape.input(alpha)).value();
}

template <class T>
Tensor<T> refine_stack(const Tensor<T>& stack, const InteractionLayerParams<T>& params) {
  Tape<T> tape;
  return refine_stack(tape.input(stack), bind(tape, params)).value();
}

}  // namespace bertil
