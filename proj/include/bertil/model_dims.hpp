#pragma once

#include <cstddef>
#include <string>

#include "bertil/errors.hpp"

namespace bertil {

/// Every width in the network. Defaults are the full-size configuration:
/// five 768-d transformer layers, 300-d generic embedding, eight 96-d heads,
/// 512-d projections, three classes.
struct ModelDims {
  std::size_t layers = 5;
  std::size_t context_dim = 768;
  std::size_t generic_dim = 300;
  std::size_t heads = 8;
  std::size_t head_dim = 96;
  std::size_t projection_dim = 512;
  std::size_t classes = 3;

  std::size_t stack_width() const noexcept { return layers * context_dim; }

  /// Closed-form count of trainable scalars. All maps are bias-free.
  std::size_t parameter_count() const noexcept {
    return heads * 3 * context_dim * head_dim   // query/key/value per head
           + context_dim * context_dim           // residual
           + stack_width() * projection_dim      // context projection
           + generic_dim * projection_dim        // generic projection
           + 2 * projection_dim * classes;       // classifier
  }

  void validate() const {
    if (!layers || !context_dim || !generic_dim || !heads || !head_dim ||
        !projection_dim) {
      throw ConfigError("model dimensions must be positive");
    }
    if (heads * head_dim != context_dim) {
      throw ConfigError("heads x head_dim (" + std::to_string(heads) + " x " +
                        std::to_string(head_dim) + ") must equal context_dim " +
                        std::to_string(context_dim));
    }
    if (classes < 2) {
      throw ConfigError("class count must be at least 2, got " +
                        std::to_string(classes));
    }
  }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

}  // namespace bertil
