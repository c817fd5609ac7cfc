#pragma once

// Glue between the on-disk artifacts (manifest, archive, config file) and the
// in-memory training types.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "bertil/archive.hpp"
#include "bertil/dataset.hpp"
#include "bertil/trainer.hpp"

namespace bertil {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Joins the manifest examples of `split` with their archive records.
/// Missing ids and label disagreements are validation errors; the message
/// lists at most the first ten missing ids.
inline std::vector<Sample> join_samples(const DatasetManifest& manifest, const Archive& archive,
                                        Split split) {
  std::unordered_map<std::string, const ArchiveRecord*> by_id;
  by_id.reserve(archive.records.size());
  for (const auto& r : archive.records) by_id.emplace(r.example_id, &r);

  std::vector<Sample> out;
  std::vector<std::string> missing;
  for (const AspectExample& e : manifest.examples) {
    if (e.split != split) continue;
    const auto it = by_id.find(e.example_id);
    if (it == by_id.end()) {
      missing.push_back(e.example_id);
      continue;
    }
    const std::size_t label = manifest.label_id(e.label);
    if (it->second->label_id != label) {
      throw ValidationError("example " + e.example_id + ": archive label " +
                            std::to_string(it->second->label_id) + " disagrees with manifest label " +
                            e.label + " (" + std::to_string(label) + ")");
    }
    out.push_back({e.example_id, it->second->stack, it->second->generic, label});
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " manifest ids missing from the archive:";
    for (std::size_t i = 0; i < std::min<std::size_t>(10, missing.size()); ++i) msg += " " + missing[i];
    if (missing.size() > 10) msg += " ...";
    throw ValidationError(msg);
  }
  return out;
}

/// Model dimensions for archive-backed data: fixed archive widths, default
/// attention geometry, class count from the scheme.
inline ModelDims archive_dims(std::size_t classes) {
  ModelDims d;
  d.layers = kArchiveLayers;
  d.context_dim = kArchiveContextDim;
  d.generic_dim = kArchiveGenericDim;
  d.classes = classes;
  return d;
}

// ---------------------------------------------------------------------------
// Run configuration

/// Settings accepted from a config file; every field is also a CLI flag.
struct RunConfig {
  TrainConfig train;
  std::optional<std::string> manifest;
  std::optional<std::string> archive;
  std::optional<std::string> out;
  std::string split = "train";
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"dropout", c.dropout},
          {"batch_size", c.batch_size},       {"epochs", c.epochs},
          {"seed", c.seed},                   {"patience", c.patience},
          {"adam_beta1", c.adam.beta1},       {"adam_beta2", c.adam.beta2},
          {"adam_epsilon", c.adam.epsilon}};
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = to_json(c.train);
  j["split"] = c.split;
  if (c.manifest) j["manifest"] = *c.manifest;
  if (c.archive) j["archive"] = *c.archive;
  if (c.out) j["out"] = *c.out;
  return j;
}

/// Applies the keys of a JSON object to `config`. Unknown keys and values of
/// the wrong type are configuration errors.
inline void apply_config(RunConfig& config, const nlohmann::json& j, const std::string& source) {
  if (!j.is_object()) throw ConfigError(source + ": config must be a JSON object");
  static const std::set<std::string> known = {
      "learning_rate", "dropout",    "batch_size", "epochs",  "seed",     "patience",
      "adam_beta1",    "adam_beta2", "adam_epsilon", "manifest", "archive", "out", "split"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(source + ": unknown key '" + key + "'");
  }
  try {
    TrainConfig& t = config.train;
    if (j.contains("learning_rate")) t.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("dropout")) t.dropout = j["dropout"].get<double>();
    if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("epochs")) t.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("patience")) t.patience = j["patience"].get<std::size_t>();
    if (j.contains("adam_beta1")) t.adam.beta1 = j["adam_beta1"].get<double>();
    if (j.contains("adam_beta2")) t.adam.beta2 = j["adam_beta2"].get<double>();
    if (j.contains("adam_epsilon")) t.adam.epsilon = j["adam_epsilon"].get<double>();
    if (j.contains("manifest")) config.manifest = j["manifest"].get<std::string>();
    if (j.contains("archive")) config.archive = j["archive"].get<std::string>();
    if (j.contains("out")) config.out = j["out"].get<std::string>();
    if (j.contains("split")) config.split = j["split"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c;
  apply_config(c, j, path.string());
  return c;
}

}  // namespace bertil
