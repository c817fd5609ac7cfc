#pragma once

// Synthetic stand-ins for extracted embeddings.
//
// SeparableTask draws stacks and generic vectors whose label depends only on
// the comparison between the two: with u a fixed unit direction in the
// generic space,
//   s = u . (mean_k stack[k][0:G] - generic)
// and the label is the bin of s among M-1 thresholds placed at the
// equal-mass quantiles of its distribution. Samples closer than
// `margin` (in units of s's standard deviation) to a threshold are redrawn.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bertil/errors.hpp"
#include "bertil/model_dims.hpp"
#include "bertil/seeds.hpp"
#include "bertil/trainer.hpp"

namespace bertil {

/// Standard normal quantile by bisection on erfc.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InputError("normal_quantile: p must lie in (0, 1)");
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
    (cdf < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

class SeparableTask {
 public:
  SeparableTask(const ModelDims& dims, std::uint64_t seed, double margin = 0.2)
      : dims_(dims), margin_(margin), rng_(derive_seed(seed, "separable-samples")) {
    if (dims.generic_dim > dims.context_dim) {
      throw ConfigError("separable task needs generic_dim <= context_dim");
    }
    std::mt19937_64 setup(derive_seed(seed, "separable-setup"));
    std::normal_distribution<double> normal;
    direction_.resize(dims.generic_dim);
    double norm = 0.0;
    for (auto& v : direction_) {
      v = normal(setup);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : direction_) v /= norm;
    offsets_ = Tensor<float>::matrix(dims.layers, dims.context_dim);
    for (auto& v : offsets_.data()) v = static_cast<float>(normal(setup));

    double mean_offset = 0.0;
    for (std::size_t i = 0; i < dims.generic_dim; ++i) {
      double col = 0.0;
      for (std::size_t k = 0; k < dims.layers; ++k) col += offsets_(k, i);
      mean_offset += direction_[i] * col / static_cast<double>(dims.layers);
    }
    sigma_ = std::sqrt(1.0 / static_cast<double>(dims.layers) + 1.0);
    for (std::size_t b = 1; b < dims.classes; ++b) {
      thresholds_.push_back(mean_offset +
                            sigma_ * normal_quantile(static_cast<double>(b) /
                                                     static_cast<double>(dims.classes)));
    }
  }

  /// Comparison score of a (stack, generic) pair.
  double score(const Tensor<float>& stack, const Tensor<float>& generic) const {
    double s = 0.0;
    for (std::size_t i = 0; i < dims_.generic_dim; ++i) {
      double mean = 0.0;
      for (std::size_t k = 0; k < dims_.layers; ++k) mean += stack(k, i);
      mean /= static_cast<double>(dims_.layers);
      s += direction_[i] * (mean - generic[i]);
    }
    return s;
  }

  std::size_t label_of(double s) const {
    std::size_t b = 0;
    while (b < thresholds_.size() && s > thresholds_[b]) ++b;
    return b;
  }

  Sample draw(std::string id) {
    for (;;) {
      Sample s = raw(std::move(id));
      const double sc = score(s.stack, s.generic);
      bool near = false;
      for (double t : thresholds_) near = near || std::abs(sc - t) < margin_ * sigma_;
      if (near) {
        id = std::move(s.id);
        continue;
      }
      s.label = label_of(sc);
      return s;
    }
  }

  /// Redraws until the sample falls in class `label`.
  Sample draw_with_label(std::string id, std::size_t label) {
    if (label >= dims_.classes) throw InputError("label outside the task's classes");
    for (;;) {
      Sample s = draw(std::move(id));
      if (s.label == label) return s;
      id = std::move(s.id);
    }
  }

  std::vector<Sample> draw_many(std::size_t n, const std::string& prefix) {
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(draw(prefix + std::to_string(i)));
    return out;
  }

  const std::vector<double>& thresholds() const noexcept { return thresholds_; }

 private:
  Sample raw(std::string id) {
    std::normal_distribution<float> normal;
    Sample s;
    s.id = std::move(id);
    s.stack = offsets_;
    for (auto& v : s.stack.data()) v += normal(rng_);
    s.generic = Tensor<float>({dims_.generic_dim});
    for (auto& v : s.generic.data()) v = normal(rng_);
    return s;
  }

  ModelDims dims_;
  double margin_;
  std::mt19937_64 rng_;
  std::vector<double> direction_;
  Tensor<float> offsets_;
  double sigma_ = 1.0;
  std::vector<double> thresholds_;
};

/// Standard-normal stacks and generic vectors with uniformly random labels.
inline std::vector<Sample> random_samples(const ModelDims& dims, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "random-samples"));
  std::normal_distribution<float> normal;
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = "random-" + std::to_string(i);
    s.stack = Tensor<float>::matrix(dims.layers, dims.context_dim);
    for (auto& v : s.stack.data()) v = normal(rng);
    s.generic = Tensor<float>({dims.generic_dim});
    for (auto& v : s.generic.data()) v = normal(rng);
    s.label = static_cast<std::size_t>(rng() % dims.classes);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bertil
