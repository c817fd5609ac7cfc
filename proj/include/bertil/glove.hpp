#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bertil/errors.hpp"
#include "bertil/tensor.hpp"

namespace bertil {

inline constexpr std::size_t kGloveDim = 300;

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Static word vectors keyed by lowercase token. Immutable once loaded.
class GloveTable {
 public:
  struct Lookup {
    bool found = false;
    std::span<const float> vector;
  };

  explicit GloveTable(std::size_t dim = kGloveDim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t vocabulary_size() const noexcept { return index_.size(); }
  const std::string& source() const noexcept { return source_; }
  std::size_t line_count() const noexcept { return line_count_; }

  /// Adds a token unless an earlier entry already claimed it. Returns
  /// whether the vector was stored.
  bool insert(std::string_view token, std::vector<float> vector) {
    if (vector.size() != dim_) {
      throw DimensionError("vector for '" + std::string(token) + "' has " +
                           std::to_string(vector.size()) + " components, expected " +
                           std::to_string(dim_));
    }
    auto [it, inserted] = index_.try_emplace(to_lower_ascii(token), values_.size());
    if (!inserted) return false;
    values_.insert(values_.end(), vector.begin(), vector.end());
    return true;
  }

  Lookup lookup(std::string_view token) const {
    const auto it = index_.find(to_lower_ascii(token));
    if (it == index_.end()) return {};
    return {true, std::span<const float>(values_).subspan(it->second, dim_)};
  }

  friend GloveTable load_glove(std::istream& in, const std::string& source, std::size_t dim);

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> values_;
  std::string source_;
  std::size_t line_count_ = 0;
};

/// Parses "token v1 ... v300" lines. Blank lines are skipped; the first
/// occurrence of a duplicated token wins.
inline GloveTable load_glove(std::istream& in, const std::string& source,
                             std::size_t dim = kGloveDim) {
  GloveTable table(dim);
  table.source_ = source;
  std::string line;
  std::size_t line_no = 0;
  std::vector<float> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fields = split_whitespace(line);
    if (fields.empty()) continue;
    if (fields.size() != dim + 1) {
      throw FormatError(source + ":" + std::to_string(line_no) + ": expected a token and " +
                        std::to_string(dim) + " values, found " +
                        std::to_string(fields.size() - 1) + " values");
    }
    values.assign(dim, 0.0f);
    for (std::size_t i = 0; i < dim; ++i) {
      const std::string_view f = fields[i + 1];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), values[i]);
      if (ec != std::errc{} || ptr != f.data() + f.size()) {
        throw FormatError(source + ":" + std::to_string(line_no) + ": value " +
                          std::to_string(i + 1) + " ('" + std::string(f) +
                          "') is not a decimal number");
      }
    }
    table.insert(fields[0], values);
  }
  if (in.bad()) throw IoError("read error in " + source);
  table.line_count_ = line_no;
  return table;
}

inline GloveTable load_glove(const std::filesystem::path& path, std::size_t dim = kGloveDim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open GloVe file " + path.string());
  return load_glove(in, path.string(), dim);
}

struct GenericLookup {
  Tensor<float> embedding;
  bool oov = false;
};

/// Lowercases and splits the aspect on whitespace, then averages the vectors
/// of the tokens present in the table. With no token found the result is a
/// zero vector and `oov` is set.
inline GenericLookup aspect_generic_embedding(std::string_view aspect, const GloveTable& table) {
  const auto tokens = split_whitespace(aspect);
  if (tokens.empty()) throw InputError("aspect is empty after trimming");
  std::vector<float> sum(table.dim(), 0.0f);
  std::size_t found = 0;
  for (std::string_view tok : tokens) {
    const auto hit = table.lookup(tok);
    if (!hit.found) continue;
    ++found;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += hit.vector[i];
  }
  GenericLookup out{Tensor<float>({table.dim()}), found == 0};
  if (found == 1) {
    std::copy(sum.begin(), sum.end(), out.embedding.data().begin());
  } else if (found > 1) {
    const float n = static_cast<float>(found);
    for (std::size_t i = 0; i < sum.size(); ++i) out.embedding[i] = sum[i] / n;
  }
  return out;
}

}  // namespace bertil
