#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every primitive executed during a forward pass, in execution
// order. Tape::backward seeds d(loss)/d(loss) = 1 and sweeps the record in
// exact reverse, each node pushing its gradient into its inputs. Gradients
// accumulate additively, so a node consumed twice receives both contributions.
//
// One tape per thread. Parameters are bound by reference (no copy) and must
// outlive the tape that references them.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <deque>
#include <vector>

#include "bertil/errors.hpp"
#include "bertil/tensor.hpp"

namespace bertil {

namespace detail {

template <class T>
using RowMajorMatrix =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C (m x p) [+]= op(A) * op(B) on row-major buffers. `a_rows`/`a_cols`
/// describe A as stored, before the optional transpose.
template <class T>
void gemm(const T* a, std::size_t a_rows, std::size_t a_cols, bool transpose_a,
          const T* b, std::size_t b_rows, std::size_t b_cols, bool transpose_b,
          T* c, bool accumulate) {
  using Map = Eigen::Map<const RowMajorMatrix<T>>;
  const Map am(a, static_cast<Eigen::Index>(a_rows),
               static_cast<Eigen::Index>(a_cols));
  const Map bm(b, static_cast<Eigen::Index>(b_rows),
               static_cast<Eigen::Index>(b_cols));
  const std::size_t m = transpose_a ? a_cols : a_rows;
  const std::size_t p = transpose_b ? b_rows : b_cols;
  Eigen::Map<RowMajorMatrix<T>> cm(c, static_cast<Eigen::Index>(m),
                                   static_cast<Eigen::Index>(p));
  if (!accumulate) cm.setZero();
  if (transpose_a && transpose_b) {
    cm.noalias() += am.transpose() * bm.transpose();
  } else if (transpose_a) {
    cm.noalias() += am.transpose() * bm;
  } else if (transpose_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am * bm;
  }
}

/// Uniform double in [0, 1) built from the top 53 bits of a 64-bit draw, so
/// the mask sequence depends only on the engine and not on the library's
/// distribution implementation.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

enum class OpKind : std::uint8_t {
  kParameter,
  kInput,
  kMatMul,
  kAdd,
  kScale,
  kTranspose,
  kReshape,
  kConcat,
  kRelu,
  kSoftmaxRows,
  kDropout,
  kSum,
  kMean,
  kCrossEntropy,
};

template <class T>
class Tape;

/// Handle to one node of a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Tensor<T>& grad() const { return tape->grad(*this); }
  const Shape& shape() const { return value().shape(); }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;

    const Tensor<T>& value() const { return external ? *external : owned; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable leaf bound to `ref` by reference.
  Var<T> parameter(const Tensor<T>& ref) {
    Node n{OpKind::kParameter, {}, {}, &ref, {}, true, {}};
    return push(std::move(n));
  }

  /// Trainable leaf that owns its value.
  Var<T> variable(Tensor<T> value) {
    Node n{OpKind::kParameter, {}, std::move(value), nullptr, {}, true, {}};
    return push(std::move(n));
  }

  /// Non-trainable leaf bound by reference.
  Var<T> input(const Tensor<T>& ref) {
    Node n{OpKind::kInput, {}, {}, &ref, {}, false, {}};
    return push(std::move(n));
  }

  /// Non-trainable leaf that owns its value.
  Var<T> constant(Tensor<T> value) {
    Node n{OpKind::kInput, {}, std::move(value), nullptr, {}, false, {}};
    return push(std::move(n));
  }

  /// Appends an interior node. `backward` is invoked only when the node both
  /// received a gradient and has at least one input that requires one.
  Var<T> record(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> value,
                Backward backward) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
    Node n{kind, std::move(inputs), std::move(value), nullptr, {}, needs,
           needs ? std::move(backward) : Backward{}};
    return push(std::move(n));
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value(); }

  /// Gradient of the last backward() target with respect to `v`. Nodes the
  /// loss does not depend on report zeros.
  const Tensor<T>& grad(Var<T> v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value().shape());
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of node `id`, zero-allocated on first use. Backward
  /// kernels add into it.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value().shape());
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw InputError("backward: variable from another tape");
    if (value(loss).size() != 1) {
      throw DimensionError("backward: loss must be scalar, got " +
                           shape_to_string(value(loss).shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(loss.id)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

 private:
  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // stable references across push
};

namespace ops {

namespace detail {

template <class T>
void require_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw InputError("operands recorded on different tapes");
}

}  // namespace detail

/// a (m x k) * b (k x p) -> (m x p).
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), p = bv.cols();
  if (k != bv.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_to_string(av.shape()) + " * " +
                         shape_to_string(bv.shape()));
  }
  Tensor<T> out = Tensor<T>::matrix(m, p);
  bertil::detail::gemm(av.data().data(), m, k, false, bv.data().data(), k, p,
                       false, out.data().data(), false);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(
      OpKind::kMatMul, {ia, ib}, std::move(out),
      [ia, ib, m, k, p](Tape<T>& t, std::size_t self) {
        const T* dc = t.node(self).grad.data().data();
        if (t.requires_grad(ia)) {
          const T* bp = t.node(ib).value().data().data();
          bertil::detail::gemm(dc, m, p, false, bp, k, p, true,
                               t.grad_buffer(ia).data().data(), true);
        }
        if (t.requires_grad(ib)) {
          const T* ap = t.node(ia).value().data().data();
          bertil::detail::gemm(ap, m, k, true, dc, m, p, false,
                               t.grad_buffer(ib).data().data(), true);
        }
      });
}

/// Elementwise sum of two same-shaped tensors.
template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
  }
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(OpKind::kAdd, {ia, ib}, std::move(out),
                        [ia, ib](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.node(self).grad;
                          for (std::size_t in : {ia, ib}) {
                            if (!t.requires_grad(in)) continue;
                            Tensor<T>& dst = t.grad_buffer(in);
                            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                          }
                        });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kScale, {ia}, std::move(out),
                        [ia, factor](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.node(self).grad;
                          Tensor<T>& dst = t.grad_buffer(ia);
                          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
                        });
}

template <class T>
Var<T> transpose(Var<T> a) {
  const Tensor<T>& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor<T> out = Tensor<T>::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = av(i, j);
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kTranspose, {ia}, std::move(out),
                        [ia, r, c](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.node(self).grad;
                          Tensor<T>& dst = t.grad_buffer(ia);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[j * r + i];
                        });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kReshape, {ia}, std::move(out),
                        [ia](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.node(self).grad;
                          Tensor<T>& dst = t.grad_buffer(ia);
                          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                        });
}

/// Contiguous concatenation along `axis`; every other dimension must agree.
template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw InputError("concat: no parts");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) +
                         " out of range for " + shape_to_string(first));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::size_t> extents;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var<T>& p : parts) {
    detail::require_same_tape(parts[0], p);
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw DimensionError("concat: " + shape_to_string(s) + " incompatible with " +
                           shape_to_string(first) + " along axis " +
                           std::to_string(axis));
    }
    extents.push_back(s[axis]);
    ids.push_back(p.id);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor<T>& src = parts[pi].value();
    const std::size_t block = extents[pi] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.data().begin() + o * block, block,
                  out.data().begin() + o * total * inner + offset * inner);
    }
    offset += extents[pi];
  }
  return parts[0].tape->record(
      OpKind::kConcat, ids, std::move(out),
      [ids, extents, outer, inner, total](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.node(self).grad;
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < ids.size(); ++pi) {
          const std::size_t block = extents[pi] * inner;
          if (t.requires_grad(ids[pi])) {
            Tensor<T>& dst = t.grad_buffer(ids[pi]);
            for (std::size_t o = 0; o < outer; ++o) {
              const T* src = g.data().data() + o * total * inner + offset * inner;
              T* d = dst.data().data() + o * block;
              for (std::size_t i = 0; i < block; ++i) d[i] += src[i];
            }
          }
          offset += extents[pi];
        }
      });
}

template <class T>
Var<T> concat(std::initializer_list<Var<T>> parts, std::size_t axis) {
  return concat(std::span<const Var<T>>(parts.begin(), parts.size()), axis);
}

/// max(0, x). The subgradient at exactly 0 is 0.
template <class T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kRelu, {ia}, std::move(out),
                        [ia](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.node(self).grad;
                          const Tensor<T>& x = t.node(ia).value();
                          Tensor<T>& dst = t.grad_buffer(ia);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (x[i] > T{0}) dst[i] += g[i];
                        });
}

/// Row-wise softmax with max subtraction.
template <class T>
Var<T> softmax_rows(Var<T> a) {
  Tensor<T> out = a.value();
  const std::size_t r = out.rows(), c = out.cols();
  for (std::size_t i = 0; i < r; ++i) {
    auto row = out.row(i);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum{0};
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kSoftmaxRows, {ia}, std::move(out),
                        [ia, r, c](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& y = t.node(self).value();
                          const Tensor<T>& g = t.node(self).grad;
                          Tensor<T>& dst = t.grad_buffer(ia);
                          for (std::size_t i = 0; i < r; ++i) {
                            T dot{0};
                            for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
                            for (std::size_t j = 0; j < c; ++j)
                              dst(i, j) += y(i, j) * (g(i, j) - dot);
                          }
                        });
}

/// Inverted dropout: in training mode each element is zeroed with
/// probability `rate` and survivors are scaled by 1/(1-rate). Identity in
/// evaluation mode or when rate is 0.
template <class T>
Var<T> dropout(Var<T> a, double rate, bool training, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return a;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(a.value().size());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = bertil::detail::unit_uniform(rng) < rate ? T{0} : keep_scale;
    out[i] *= mask[i];
  }
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kDropout, {ia}, std::move(out),
                        [ia, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.node(self).grad;
                          Tensor<T>& dst = t.grad_buffer(ia);
                          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += mask[i] * g[i];
                        });
}

/// Sum of all elements, as a one-element tensor.
template <class T>
Var<T> sum(Var<T> a) {
  T total{0};
  for (T v : a.value().data()) total += v;
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kSum, {ia}, Tensor<T>({1}, total),
                        [ia](Tape<T>& t, std::size_t self) {
                          const T g = t.node(self).grad[0];
                          for (auto& d : t.grad_buffer(ia).data()) d += g;
                        });
}

/// Arithmetic mean of one-element tensors.
template <class T>
Var<T> mean(std::span<const Var<T>> scalars) {
  if (scalars.empty()) throw InputError("mean: no operands");
  T total{0};
  std::vector<std::size_t> ids;
  for (const Var<T>& s : scalars) {
    if (s.value().size() != 1) {
      throw DimensionError("mean: operand " + shape_to_string(s.shape()) +
                           " is not a scalar");
    }
    total += s.value()[0];
    ids.push_back(s.id);
  }
  const T inv = T{1} / static_cast<T>(scalars.size());
  return scalars[0].tape->record(OpKind::kMean, ids, Tensor<T>({1}, total * inv),
                                 [ids, inv](Tape<T>& t, std::size_t self) {
                                   const T g = t.node(self).grad[0] * inv;
                                   for (std::size_t in : ids)
                                     if (t.requires_grad(in)) t.grad_buffer(in)[0] += g;
                                 });
}

/// Smallest probability fed to the logarithm in cross_entropy.
inline constexpr double kLogClamp = 1e-12;

/// -log(max(p[target], 1e-12)) for a probability row vector. The clamp
/// blocks the gradient when active.
template <class T>
Var<T> cross_entropy(Var<T> probs, std::size_t target) {
  const Tensor<T>& p = probs.value();
  if (target >= p.size()) {
    throw InputError("cross_entropy: target " + std::to_string(target) +
                     " outside " + std::to_string(p.size()) + " classes");
  }
  const T clamp = static_cast<T>(kLogClamp);
  const T pt = p[target];
  const bool clamped = !(pt > clamp);
  const T loss = -std::log(clamped ? clamp : pt);
  const std::size_t ip = probs.id;
  return probs.tape->record(OpKind::kCrossEntropy, {ip}, Tensor<T>({1}, loss),
                            [ip, target, clamped](Tape<T>& t, std::size_t self) {
                              if (clamped) return;
                              const T g = t.node(self).grad[0];
                              const T pt = t.node(ip).value()[target];
                              t.grad_buffer(ip)[target] -= g / pt;
                            });
}

}  // namespace ops
}  // namespace bertil
