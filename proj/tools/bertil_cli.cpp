// Command-line front end: prepare, train, eval, report, synth.
//
// Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bertil/bertil.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Raised for argument combinations CLI11 cannot check on its own.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json tool_info() { return {{"name", "bertil"}, {"version", std::string(bertil::kToolVersion)}}; }

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw bertil::IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw bertil::IoError("write failed: " + path.string());
}

// --------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  std::string dataset;
  std::string input;
  std::string split;
  std::string scheme;
  std::string out;
  bool verify_table1 = false;
};

int run_prepare(const PrepareArgs& a) {
  const auto kind = bertil::parse_dataset_kind(a.dataset);
  const auto split = bertil::parse_split(a.split);
  const auto scheme = a.scheme.empty() ? bertil::default_scheme(kind) : bertil::parse_scheme(a.scheme);

  const bertil::ParseReport report = bertil::parse_dataset(kind, a.input, split);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';

  const json provenance = {{"tool", tool_info()},
                           {"config",
                            {{"dataset", a.dataset},
                             {"input", a.input},
                             {"split", a.split},
                             {"scheme", bertil::to_string(scheme)}}},
                           {"sentences", report.sentence_count},
                           {"skipped", report.skipped}};
  const auto manifest = bertil::build_manifest(report.examples, scheme, bertil::to_string(kind));
  bertil::write_manifest(fs::path(a.out), manifest, provenance);

  std::cout << "sentences: " << report.sentence_count << "\nexamples: " << report.examples.size()
            << "\nkept: " << manifest.examples.size() << '\n';
  for (const auto& [label, n] : manifest.dropped) std::cout << "dropped " << label << ": " << n << '\n';
  if (report.skipped) std::cout << "skipped incomplete records: " << report.skipped << '\n';

  if (!a.verify_table1) return 0;
  const auto v = bertil::verify_tallies(report, bertil::reference_tallies(kind, split));
  std::cout << "label\texpected\tfound\tstatus\n";
  for (const auto& c : v.cells) {
    std::cout << c.label << '\t' << c.expected << '\t' << c.found << '\t' << (c.ok() ? "ok" : "MISMATCH")
              << '\n';
  }
  std::cout << "total: " << v.total_note << '\n';
  if (!v.ok()) {
    std::cerr << "error: label tallies differ from the reference counts\n";
    return kExitRuntime;
  }
  return 0;
}

// --------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string manifest;
  std::string out;
  std::uint64_t seed = 0;
  double margin = 0.2;
};

int run_synth(const SynthArgs& a) {
  const auto manifest = bertil::read_manifest(fs::path(a.manifest));
  const auto dims = bertil::archive_dims(manifest.class_count());
  bertil::SeparableTask task(dims, a.seed, a.margin);
  std::vector<bertil::ArchiveRecord> records;
  records.reserve(manifest.examples.size());
  for (const auto& e : manifest.examples) {
    const std::size_t label = manifest.label_id(e.label);
    bertil::Sample s = task.draw_with_label(e.example_id, label);
    records.push_back({e.example_id, static_cast<std::uint8_t>(label), std::move(s.stack),
                       std::move(s.generic), false});
  }
  const std::size_t n = bertil::write_archive(fs::path(a.out), records);
  std::cout << "wrote " << n << " records to " << a.out << '\n';
  return 0;
}

// --------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config_path;
  std::optional<std::string> manifest, archive, out, split, log;
  std::optional<double> lr, dropout;
  std::optional<std::size_t> batch_size, epochs, patience;
  std::optional<std::uint64_t> seed;
};

bertil::RunConfig resolve_config(const TrainArgs& a) {
  bertil::RunConfig c = a.config_path.empty() ? bertil::RunConfig{} : bertil::load_run_config(a.config_path);
  if (a.manifest) c.manifest = a.manifest;
  if (a.archive) c.archive = a.archive;
  if (a.out) c.out = a.out;
  if (a.split) c.split = *a.split;
  if (a.lr) c.train.learning_rate = *a.lr;
  if (a.dropout) c.train.dropout = *a.dropout;
  if (a.batch_size) c.train.batch_size = *a.batch_size;
  if (a.epochs) c.train.epochs = *a.epochs;
  if (a.patience) c.train.patience = *a.patience;
  if (a.seed) c.train.seed = *a.seed;
  if (!c.manifest || !c.archive || !c.out) {
    throw UsageError("train needs --manifest, --archive and --out (flags or config file)");
  }
  c.train.validate();
  return c;
}

int run_train(const TrainArgs& a) {
  const bertil::RunConfig c = resolve_config(a);
  const auto manifest = bertil::read_manifest(fs::path(*c.manifest));
  const auto archive = bertil::read_archive(fs::path(*c.archive));
  const auto samples = bertil::join_samples(manifest, archive, bertil::parse_split(c.split));
  if (samples.empty()) throw bertil::InputError("no examples in split '" + c.split + "'");
  const auto dims = bertil::archive_dims(manifest.class_count());

  const json config = bertil::to_json(c);
  std::cout << "seed: " << c.train.seed << "\nconfig: " << config.dump() << "\nexamples: " << samples.size()
            << "\nparameters: " << dims.parameter_count() << '\n';

  json epochs = json::array();
  const auto result = bertil::train(
      c.train, dims, samples, [&](const bertil::EpochRecord& r, const bertil::ModelParameters<float>&) {
        std::printf("epoch %zu loss %.6f accuracy %.4f\n", r.epoch, r.mean_loss, r.train_accuracy);
        std::fflush(stdout);
        epochs.push_back({{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"train_accuracy", r.train_accuracy}});
        return true;
      });

  const json header = {{"tool", tool_info()},
                       {"config", config},
                       {"dataset", manifest.dataset},
                       {"scheme", manifest.scheme},
                       {"epochs_run", result.log.size()}};
  bertil::save_checkpoint(fs::path(*c.out), result.params, header);
  const fs::path log_path = a.log ? fs::path(*a.log) : fs::path(*c.out + ".log.json");
  write_json(log_path, {{"tool", tool_info()}, {"seed", c.train.seed}, {"config", config}, {"epochs", epochs}});
  std::cout << "checkpoint: " << *c.out << "\nlog: " << log_path.string() << '\n';
  return 0;
}

// --------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint, manifest, archive, report;
  std::string split = "test";
  std::string name;
  std::size_t timing_samples = bertil::kMinTimingSamples;
};

int run_eval(const EvalArgs& a) {
  const auto ck = bertil::load_checkpoint(fs::path(a.checkpoint));
  const auto manifest = bertil::read_manifest(fs::path(a.manifest));
  const std::size_t classes = ck.params.head.class_count();
  if (classes != manifest.class_count()) {
    throw bertil::ValidationError("checkpoint predicts " + std::to_string(classes) + " classes but the manifest scheme has " +
                                  std::to_string(manifest.class_count()));
  }
  if (ck.header.contains("scheme") && ck.header["scheme"].get<std::vector<std::string>>() != manifest.scheme) {
    throw bertil::ValidationError("checkpoint label scheme " + ck.header["scheme"].dump() +
                                  " differs from the manifest scheme " + json(manifest.scheme).dump());
  }
  if (a.timing_samples != 0 && a.timing_samples < bertil::kMinTimingSamples) {
    throw UsageError("--timing-samples must be 0 or at least " + std::to_string(bertil::kMinTimingSamples));
  }
  const auto archive = bertil::read_archive(fs::path(a.archive));
  const auto samples = bertil::join_samples(manifest, archive, bertil::parse_split(a.split));
  const auto ev = bertil::evaluate(ck.params, samples);

  const std::size_t params = bertil::count_parameters(ck.params);
  bertil::MetricsReport r;
  r.name = a.name.empty() ? fs::path(a.checkpoint).stem().string() : a.name;
  r.accuracy = ev.accuracy;
  r.total = ev.total;
  r.labels = manifest.scheme;
  r.confusion = ev.confusion;
  if (a.timing_samples == 0) {
    r.efficiency = bertil::size_metrics(100.0 * ev.accuracy, params);
  } else {
    const auto times = bertil::measure_step_times(ck.params, samples.front(), a.timing_samples);
    r.efficiency = bertil::efficiency_report(100.0 * ev.accuracy, params, times);
  }
  r.config = {{"tool", tool_info()},
              {"checkpoint", a.checkpoint},
              {"manifest", a.manifest},
              {"archive", a.archive},
              {"split", a.split},
              {"timing_samples", a.timing_samples},
              {"train_config", ck.header.value("config", json::object())}};
  write_json(a.report, bertil::to_json(r));

  std::printf("accuracy %.4f (%zu/%zu)\nparameters %zu\nsize_mb %.4f\neconomy_score %.6f\n", ev.accuracy,
              ev.correct, ev.total, params, r.efficiency.size_mb, r.efficiency.economy_score);
  if (r.efficiency.step_time_s) {
    std::printf("step_time_s %.6f\ngreen_score %.4f\n", *r.efficiency.step_time_s, *r.efficiency.green_score);
  }
  return 0;
}

// --------------------------------------------------------------------------
// report

struct ReportArgs {
  std::vector<std::string> metrics;
  std::string side_table;
  std::string out;
};

int run_report(const ReportArgs& a) {
  std::vector<bertil::ComparisonRow> rows;
  for (const auto& m : a.metrics) rows.push_back(bertil::comparison_row(bertil::read_metrics(m)));
  if (!a.side_table.empty()) {
    auto side = bertil::read_side_table(fs::path(a.side_table));
    rows.insert(rows.end(), side.begin(), side.end());
  }
  bertil::check_unique_names(rows);
  std::ofstream out(a.out, std::ios::trunc);
  if (!out) throw bertil::IoError("cannot open " + a.out + " for writing");
  out << "# bertil " << bertil::kToolVersion << " report; inputs:";
  for (const auto& m : a.metrics) out << ' ' << m;
  if (!a.side_table.empty()) out << " side-table " << a.side_table;
  out << '\n';
  bertil::write_comparison_table(out, rows);
  if (!out) throw bertil::IoError("write failed: " + a.out);
  bertil::write_comparison_table(std::cout, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aspect polarity classifier over stacked encoder layers"};
  app.set_version_flag("--version", std::string(bertil::kToolVersion));
  app.require_subcommand(1);

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "Parse a dataset file into a manifest");
  prepare->add_option("--dataset", pa.dataset, "semeval14 | semeval16 | sentihood")
      ->required()
      ->check(CLI::IsMember({"semeval14", "semeval16", "sentihood"}));
  prepare->add_option("--input", pa.input, "Dataset file")->required();
  prepare->add_option("--split", pa.split, "train | test")->required()->check(CLI::IsMember({"train", "test"}));
  prepare->add_option("--scheme", pa.scheme, "2way | 3way | 4way (default depends on dataset)")
      ->check(CLI::IsMember({"2way", "3way", "4way"}));
  prepare->add_option("--out", pa.out, "Manifest path")->required();
  prepare->add_flag("--verify-table1", pa.verify_table1, "Compare label tallies with the reference counts");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic embedding archive for a manifest");
  synth->add_option("--manifest", sa.manifest)->required();
  synth->add_option("--out", sa.out, "Archive path")->required();
  synth->add_option("--seed", sa.seed);
  synth->add_option("--margin", sa.margin, "Class margin in score standard deviations")->check(CLI::NonNegativeNumber);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a classifier");
  train->add_option("--config", ta.config_path, "JSON config file");
  train->add_option("--manifest", ta.manifest);
  train->add_option("--archive", ta.archive);
  train->add_option("--out", ta.out, "Checkpoint path");
  train->add_option("--log", ta.log, "Training log path (default: <out>.log.json)");
  train->add_option("--split", ta.split)->check(CLI::IsMember({"train", "test"}));
  train->add_option("--lr", ta.lr);
  train->add_option("--dropout", ta.dropout);
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--epochs", ta.epochs);
  train->add_option("--patience", ta.patience);
  train->add_option("--seed", ta.seed);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  eval->add_option("--manifest", ea.manifest)->required();
  eval->add_option("--archive", ea.archive)->required();
  eval->add_option("--report", ea.report, "Metrics JSON path")->required();
  eval->add_option("--split", ea.split)->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--name", ea.name, "Model name in the report");
  eval->add_option("--timing-samples", ea.timing_samples, "Timed steps for the step time; 0 skips timing");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Merge metrics files into a comparison table");
  report->add_option("--metrics", ra.metrics, "Metrics JSON files")->required();
  report->add_option("--side-table", ra.side_table, "CSV of name,accuracy_percent,size_mb,time_s");
  report->add_option("--out", ra.out, "Table path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*prepare) return run_prepare(pa);
    if (*synth) return run_synth(sa);
    if (*train) return run_train(ta);
    if (*eval) return run_eval(ea);
    if (*report) return run_report(ra);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const bertil::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const bertil::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
