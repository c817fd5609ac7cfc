#pragma once

// Accuracy and efficiency reporting.
//
//   size_mb       = trainable parameters x 4 bytes / 2^20
//   step_time_s   = median of single-example forward+backward timings
//   economy_score = accuracy% / size_mb
//   green_score   = accuracy% / step_time_s

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "bertil/errors.hpp"
#include "bertil/model.hpp"
#include "bertil/trainer.hpp"

namespace bertil {

inline double parameter_size_mb(std::size_t param_count) {
  return static_cast<double>(param_count) * 4.0 / static_cast<double>(1u << 20);
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw InputError("median of no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct EfficiencyMetrics {
  std::size_t param_count = 0;
  double size_mb = 0.0;
  std::optional<double> step_time_s;
  double economy_score = 0.0;
  std::optional<double> green_score;
};

/// Minimum number of timing samples efficiency_report accepts.
inline constexpr std::size_t kMinTimingSamples = 30;

/// Size-only metrics; step time and green score stay empty.
inline EfficiencyMetrics size_metrics(double accuracy_percent, std::size_t param_count) {
  EfficiencyMetrics m;
  m.param_count = param_count;
  m.size_mb = parameter_size_mb(param_count);
  m.economy_score = accuracy_percent / m.size_mb;
  return m;
}

inline EfficiencyMetrics efficiency_report(double accuracy_percent, std::size_t param_count,
                                           std::span<const double> timing_samples) {
  if (timing_samples.empty()) throw InputError("efficiency report needs timing samples");
  if (timing_samples.size() < kMinTimingSamples) {
    throw InputError("efficiency report needs at least " + std::to_string(kMinTimingSamples) +
                     " timing samples, got " + std::to_string(timing_samples.size()));
  }
  EfficiencyMetrics m = size_metrics(accuracy_percent, param_count);
  m.step_time_s = median({timing_samples.begin(), timing_samples.end()});
  m.green_score = accuracy_percent / *m.step_time_s;
  return m;
}

/// Wall-clock seconds of `samples` single-example forward+backward passes
/// (training mode, batch size 1), after `warmup` untimed passes.
inline std::vector<double> measure_step_times(const ModelParameters<float>& params,
                                              const Sample& sample, std::size_t samples,
                                              std::size_t warmup = 3, double dropout_rate = 0.1) {
  std::mt19937_64 rng(0);
  const DropoutState dropout{dropout_rate, true, &rng};
  std::vector<double> out;
  out.reserve(samples);
  const Sample* batch[] = {&sample};
  for (std::size_t i = 0; i < warmup + samples; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Tape<float> tape;
    const BatchLoss bl = batch_loss(tape, params, batch, dropout);
    tape.backward(bl.loss);
    const auto t1 = std::chrono::steady_clock::now();
    if (i >= warmup) out.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Comparison tables

struct ComparisonRow {
  std::string name;
  double accuracy_percent = 0.0;
  double size_mb = 0.0;
  std::optional<double> time_s;
  double economy_score = 0.0;
  std::optional<double> green_score;
};

inline ComparisonRow make_comparison_row(std::string name, double accuracy_percent, double size_mb,
                                         std::optional<double> time_s) {
  if (!(size_mb > 0.0)) throw InputError(name + ": size must be positive");
  if (time_s && !(*time_s > 0.0)) throw InputError(name + ": time must be positive");
  ComparisonRow r{std::move(name), accuracy_percent, size_mb, time_s, accuracy_percent / size_mb,
                  std::nullopt};
  if (time_s) r.green_score = accuracy_percent / *time_s;
  return r;
}

/// Side table of externally reported models: comma-separated
/// `name,accuracy_percent,size_mb,time_s` rows. Blank lines, `#` comments
/// and a leading `name,...` header are ignored.
inline std::vector<ComparisonRow> read_side_table(std::istream& in, const std::string& source) {
  std::vector<ComparisonRow> rows;
  std::string line;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) {
      const auto b = f.find_first_not_of(" \t");
      const auto e = f.find_last_not_of(" \t");
      fields.push_back(b == std::string::npos ? "" : f.substr(b, e - b + 1));
    }
    if (rows.empty() && !fields.empty() && fields[0] == "name") continue;
    auto number = [&](std::size_t i) {
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(fields[i], &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != fields[i].size() || !std::isfinite(v)) {
        throw FormatError(source + ": row " + std::to_string(row_no) + ": field " +
                          std::to_string(i + 1) + " ('" + fields[i] + "') is not a number");
      }
      return v;
    };
    if (fields.size() != 4 || fields[0].empty()) {
      throw FormatError(source + ": row " + std::to_string(row_no) +
                        ": expected name,accuracy,size_mb,time_s");
    }
    try {
      rows.push_back(make_comparison_row(fields[0], number(1), number(2), number(3)));
    } catch (const InputError& e) {
      throw FormatError(source + ": row " + std::to_string(row_no) + ": " + e.what());
    }
  }
  return rows;
}

inline std::vector<ComparisonRow> read_side_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open side table " + path.string());
  return read_side_table(in, path.string());
}

inline void check_unique_names(std::span<const ComparisonRow> rows) {
  std::unordered_set<std::string> seen;
  for (const auto& r : rows)
    if (!seen.insert(r.name).second) throw ValidationError("duplicate model name '" + r.name + "'");
}

/// Tab-separated columns with a header line; missing values print as "NA".
inline void write_comparison_table(std::ostream& out, std::span<const ComparisonRow> rows) {
  auto opt = [](const std::optional<double>& v, int precision) {
    if (!v) return std::string("NA");
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << *v;
    return os.str();
  };
  out << "name\taccuracy\tsize_mb\ttime_s\teconomy_score\tgreen_score\n";
  for (const auto& r : rows) {
    out << r.name << '\t' << opt(r.accuracy_percent, 4) << '\t' << opt(r.size_mb, 4) << '\t'
        << opt(r.time_s, 6) << '\t' << opt(r.economy_score, 6) << '\t' << opt(r.green_score, 4)
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// Metrics report file

struct MetricsReport {
  std::string name;
  double accuracy = 0.0;  // fraction
  std::size_t total = 0;
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> confusion;
  EfficiencyMetrics efficiency;
  nlohmann::json config = nlohmann::json::object();
};

inline nlohmann::json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"name", r.name},
          {"accuracy", r.accuracy},
          {"total", r.total},
          {"labels", r.labels},
          {"confusion", r.confusion},
          {"param_count", r.efficiency.param_count},
          {"size_mb", r.efficiency.size_mb},
          {"step_time_s", opt(r.efficiency.step_time_s)},
          {"economy_score", r.efficiency.economy_score},
          {"green_score", opt(r.efficiency.green_score)},
          {"config", r.config}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
  };
  r.name = j.at("name").get<std::string>();
  r.accuracy = j.at("accuracy").get<double>();
  r.total = j.value("total", std::size_t{0});
  if (j.contains("labels")) r.labels = j["labels"].get<std::vector<std::string>>();
  if (j.contains("confusion")) r.confusion = j["confusion"].get<std::vector<std::vector<std::size_t>>>();
  r.efficiency.param_count = j.at("param_count").get<std::size_t>();
  r.efficiency.size_mb = j.at("size_mb").get<double>();
  r.efficiency.step_time_s = opt("step_time_s");
  r.efficiency.economy_score = j.at("economy_score").get<double>();
  r.efficiency.green_score = opt("green_score");
  if (j.contains("config")) r.config = j["config"];
  return r;
}

inline MetricsReport read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file " + path.string());
  try {
    return metrics_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline ComparisonRow comparison_row(const MetricsReport& r) {
  ComparisonRow row;
  row.name = r.name;
  row.accuracy_percent = 100.0 * r.accuracy;
  row.size_mb = r.efficiency.size_mb;
  row.time_s = r.efficiency.step_time_s;
  row.economy_score = r.efficiency.economy_score;
  row.green_score = r.efficiency.green_score;
  return row;
}

}  // namespace bertil
