#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bertil/autodiff.hpp"
#include "bertil/interaction.hpp"
#include "bertil/model_dims.hpp"
#include "bertil/polarity_head.hpp"
#include "bertil/seeds.hpp"

namespace bertil {

template <class T>
struct ModelParameters;

template <class T>
std::vector<const Tensor<T>*> matrices(const ModelParameters<T>& p);

template <class T>
struct ModelParameters {
  InteractionLayerParams<T> interaction;
  HeadParams<T> head;

  template <class U>
  ModelParameters<U> cast() const;

  friend bool operator==(const ModelParameters& a, const ModelParameters& b) {
    const auto x = matrices(a);
    const auto y = matrices(b);
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!(*x[i] == *y[i])) return false;
    return true;
  }
};

/// Visits every matrix in a fixed order: per head query, key, value; then
/// residual, context projection, generic projection, classifier. This order
/// is the checkpoint layout and the optimizer-state layout.
template <class Params, class F>
void for_each_matrix(Params& p, F&& fn) {
  for (std::size_t h = 0; h < p.interaction.heads.size(); ++h) {
    auto& head = p.interaction.heads[h];
    const std::string prefix = "interaction.head" + std::to_string(h) + ".";
    fn(prefix + "query", head.query);
    fn(prefix + "key", head.key);
    fn(prefix + "value", head.value);
  }
  fn(std::string("interaction.residual"), p.interaction.residual);
  fn(std::string("head.context"), p.head.context);
  fn(std::string("head.generic"), p.head.generic);
  fn(std::string("head.classify"), p.head.classify);
}

/// Matrices in visiting order.
template <class T>
std::vector<Tensor<T>*> matrices(ModelParameters<T>& p) {
  std::vector<Tensor<T>*> out;
  for_each_matrix(p, [&](const std::string&, Tensor<T>& m) { out.push_back(&m); });
  return out;
}

template <class T>
std::vector<const Tensor<T>*> matrices(const ModelParameters<T>& p) {
  std::vector<const Tensor<T>*> out;
  for_each_matrix(p, [&](const std::string&, const Tensor<T>& m) { out.push_back(&m); });
  return out;
}

template <class T>
template <class U>
ModelParameters<U> ModelParameters<T>::cast() const {
  ModelParameters<U> out;
  out.interaction.heads.resize(interaction.heads.size());
  for (std::size_t h = 0; h < interaction.heads.size(); ++h) {
    out.interaction.heads[h].query = interaction.heads[h].query.template cast<U>();
    out.interaction.heads[h].key = interaction.heads[h].key.template cast<U>();
    out.interaction.heads[h].value = interaction.heads[h].value.template cast<U>();
  }
  out.interaction.residual = interaction.residual.template cast<U>();
  out.head.context = head.context.template cast<U>();
  out.head.generic = head.generic.template cast<U>();
  out.head.classify = head.classify.template cast<U>();
  return out;
}

/// Runtime enumeration of trainable scalars.
template <class T>
std::size_t count_parameters(const ModelParameters<T>& p) {
  std::size_t n = 0;
  for_each_matrix(p, [&](const std::string&, const Tensor<T>& m) { n += m.size(); });
  return n;
}

/// Recovers the dimensions implied by the matrix shapes.
template <class T>
ModelDims infer_dims(const ModelParameters<T>& p) {
  ModelDims d;
  if (p.interaction.heads.empty()) throw DimensionError("model has no attention heads");
  d.heads = p.interaction.heads.size();
  d.context_dim = p.interaction.residual.rows();
  d.head_dim = p.interaction.heads[0].query.cols();
  d.projection_dim = p.head.context.cols();
  d.layers = p.head.context.rows() / std::max<std::size_t>(d.context_dim, 1);
  d.generic_dim = p.head.generic.rows();
  d.classes = p.head.classify.cols();
  return d;
}

/// Zero-filled parameters of the given dimensions.
template <class T>
ModelParameters<T> zero_params(const ModelDims& dims) {
  dims.validate();
  ModelParameters<T> p;
  p.interaction.heads.resize(dims.heads);
  for (auto& h : p.interaction.heads) {
    h.query = Tensor<T>::matrix(dims.context_dim, dims.head_dim);
    h.key = Tensor<T>::matrix(dims.context_dim, dims.head_dim);
    h.value = Tensor<T>::matrix(dims.context_dim, dims.head_dim);
  }
  p.interaction.residual = Tensor<T>::matrix(dims.context_dim, dims.context_dim);
  p.head.context = Tensor<T>::matrix(dims.stack_width(), dims.projection_dim);
  p.head.generic = Tensor<T>::matrix(dims.generic_dim, dims.projection_dim);
  p.head.classify = Tensor<T>::matrix(2 * dims.projection_dim, dims.classes);
  return p;
}

inline double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

/// Xavier-uniform initialisation, deterministic per seed.
template <class T>
ModelParameters<T> init_params(std::uint64_t seed, const ModelDims& dims) {
  ModelParameters<T> p = zero_params<T>(dims);
  std::mt19937_64 rng(derive_seed(seed, "init"));
  for_each_matrix(p, [&](const std::string&, Tensor<T>& m) {
    const double bound = xavier_bound(m.rows(), m.cols());
    for (auto& v : m.data()) {
      v = static_cast<T>(bound * (2.0 * detail::unit_uniform(rng) - 1.0));
      // Rounding to float can land one ulp past the bound.
      if (std::abs(static_cast<double>(v)) > bound) v = static_cast<T>(v > 0 ? bound : -bound);
    }
  });
  return p;
}

template <class T>
struct BoundModel {
  BoundInteractionLayer<T> interaction;
  BoundHead<T> head;
};

template <class T>
BoundModel<T> bind(Tape<T>& tape, const ModelParameters<T>& p) {
  return {bind(tape, p.interaction), bind(tape, p.head)};
}

/// Full forward pass for one aspect: refine, project both embeddings,
/// classify. Dropout sites: the refined stack and the joined projection.
template <class T>
Classification<T> forward(Var<T> stack, Var<T> generic, const BoundModel<T>& model,
                          const DropoutState& dropout) {
  if (stack.value().cols() != model.interaction.residual.value().rows() ||
      stack.value().size() != model.head.context.value().rows()) {
    throw DimensionError("contextual stack " + shape_to_string(stack.shape()) +
                         " does not match the model");
  }
  const Var<T> refined = dropout.apply(refine_stack(stack, model.interaction));
  const Var<T> c = project_context(refined, model.head.context);
  const Var<T> g = project_generic(generic, model.head.generic);
  return classify(c, g, model.head.classify, dropout);
}

/// Evaluation-mode prediction distribution as a plain tensor (1 x M).
template <class T>
Tensor<T> predict(const Tensor<T>& stack, const Tensor<T>& generic,
                  const ModelParameters<T>& params) {
  Tape<T> tape;
  const BoundModel<T> model = bind(tape, params);
  return forward(tape.input(stack), tape.input(generic), model, DropoutState::eval())
      .probs.value();
}

/// Index of the largest entry; ties resolve to the lowest index.
template <class T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

}  // namespace bertil
