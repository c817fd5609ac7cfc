#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bertil/autodiff.hpp"
#include "bertil/model.hpp"
#include "bertil/optimizer.hpp"
#include "bertil/seeds.hpp"

namespace bertil {

struct TrainConfig {
  double learning_rate = 1e-5;
  double dropout = 0.1;
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  AdamConfig adam;
  /// Stop after this many epochs without a lower mean loss; 0 disables.
  std::size_t patience = 0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be positive, got " + std::to_string(learning_rate));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw ConfigError("dropout must lie in [0, 1), got " + std::to_string(dropout));
    }
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  }
};

/// One training or evaluation example, already joined with its embeddings.
struct Sample {
  std::string id;
  Tensor<float> stack;
  Tensor<float> generic;
  std::size_t label = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double train_accuracy = 0.0;  // of the training-mode predictions
};

struct TrainResult {
  ModelParameters<float> params;
  std::vector<EpochRecord> log;
  AdamState<float> optimizer;
};

/// Seeded Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(detail::unit_uniform(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  return order;
}

/// Mean cross-entropy of a batch plus the tape it was recorded on. The tape
/// must stay alive while gradients are read.
struct BatchLoss {
  Var<float> loss;
  BoundModel<float> model;
  std::vector<std::size_t> predictions;
};

inline BatchLoss batch_loss(Tape<float>& tape, const ModelParameters<float>& params,
                            std::span<const Sample* const> batch, const DropoutState& dropout) {
  BatchLoss out{{}, bind(tape, params), {}};
  std::vector<Var<float>> losses;
  losses.reserve(batch.size());
  for (const Sample* s : batch) {
    const Classification<float> c =
        forward(tape.input(s->stack), tape.input(s->generic), out.model, dropout);
    losses.push_back(cross_entropy(c.probs, s->label));
    out.predictions.push_back(argmax(c.probs.value().data()));
  }
  out.loss = ops::mean(std::span<const Var<float>>(losses));
  return out;
}

/// Gradient tensors of a bound model, in for_each_matrix order.
template <class T>
std::vector<const Tensor<T>*> bound_gradients(const BoundModel<T>& m) {
  std::vector<const Tensor<T>*> out;
  for (const auto& h : m.interaction.heads) {
    out.push_back(&h.query.grad());
    out.push_back(&h.key.grad());
    out.push_back(&h.value.grad());
  }
  out.push_back(&m.interaction.residual.grad());
  out.push_back(&m.head.context.grad());
  out.push_back(&m.head.generic.grad());
  out.push_back(&m.head.classify.grad());
  return out;
}

template <class T>
std::vector<std::string> parameter_names(const ModelParameters<T>& p) {
  std::vector<std::string> out;
  for_each_matrix(p, [&](const std::string& name, const Tensor<T>&) { out.push_back(name); });
  return out;
}

/// Called after every epoch; returning false stops training.
using EpochCallback =
    std::function<bool(const EpochRecord&, const ModelParameters<float>&)>;

inline void check_samples(std::span<const Sample> data, const ModelDims& dims) {
  for (const Sample& s : data) {
    if (s.label >= dims.classes) {
      throw ValidationError("sample " + s.id + " has label " + std::to_string(s.label) +
                            " but the model has " + std::to_string(dims.classes) + " classes");
    }
  }
}

/// Minibatch Adam on the mean cross-entropy. Deterministic given the config
/// seed: parameters, epoch shuffles and dropout masks each draw from their
/// own derived generator.
inline TrainResult train(const TrainConfig& config, const ModelDims& dims,
                         std::span<const Sample> data, const EpochCallback& on_epoch = {},
                         const ModelParameters<float>* initial = nullptr) {
  config.validate();
  dims.validate();
  check_samples(data, dims);
  TrainResult result;
  result.params = initial ? *initial : init_params<float>(config.seed, dims);
  auto params = matrices(result.params);
  const auto names = parameter_names(result.params);
  result.optimizer = AdamState<float>(params, config.adam);
  if (config.epochs == 0 || data.empty()) return result;

  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::mt19937_64 dropout_rng(derive_seed(config.seed, "dropout"));
  const DropoutState dropout{config.dropout, true, &dropout_rng};

  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::vector<const Sample*> batch;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = shuffled_indices(data.size(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);

      Tape<float> tape;
      const BatchLoss bl = batch_loss(tape, result.params, batch, dropout);
      loss_sum += static_cast<double>(bl.loss.value()[0]) * static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i)
        correct += bl.predictions[i] == batch[i]->label ? 1 : 0;
      tape.backward(bl.loss);
      const auto grads = bound_gradients(bl.model);
      adam_step(std::span<Tensor<float>* const>(params), std::span<const Tensor<float>* const>(grads),
                result.optimizer, config.learning_rate, names);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(data.size()),
                    static_cast<double>(correct) / static_cast<double>(data.size())};
    result.log.push_back(rec);
    if (on_epoch && !on_epoch(rec, result.params)) break;
    if (config.patience > 0) {
      if (rec.mean_loss < best_loss) {
        best_loss = rec.mean_loss;
        stale = 0;
      } else if (++stale >= config.patience) {
        break;
      }
    }
  }
  return result;
}

struct Evaluation {
  double accuracy = 0.0;
  std::size_t total = 0;
  std::size_t correct = 0;
  /// confusion[gold][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<std::size_t> predictions;
};

/// Evaluation-mode accuracy. Argmax ties go to the lowest class index.
inline Evaluation evaluate(const ModelParameters<float>& params, std::span<const Sample> data) {
  if (data.empty()) throw InputError("evaluate: no examples in the requested split");
  const std::size_t classes = params.head.class_count();
  check_samples(data, infer_dims(params));
  Evaluation ev;
  ev.total = data.size();
  ev.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (const Sample& s : data) {
    const Tensor<float> probs = predict(s.stack, s.generic, params);
    const std::size_t pred = argmax(probs.data());
    ev.predictions.push_back(pred);
    ++ev.confusion[s.label][pred];
    if (pred == s.label) ++ev.correct;
  }
  ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.total);
  return ev;
}

}  // namespace bertil
