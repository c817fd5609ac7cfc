// Acceptance run: one PASS/FAIL/SKIP line per criterion, exit status 1 if
// anything failed.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bertil/bertil.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using bertil::ModelDims;
using bertil::Tape;
using bertil::Tensor;
using bertil::Var;

namespace {

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check, double limit_s = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {Status::kFail, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0.0 && secs >= limit_s && o.status == Status::kPass) {
    o.status = Status::kFail;
    o.detail += "; runtime limit " + std::to_string(limit_s) + " s exceeded";
  }
  const char* tag = o.status == Status::kPass ? "PASS" : o.status == Status::kFail ? "FAIL" : "SKIP";
  if (o.status == Status::kFail) ++failures;
  std::printf("%s  %-34s %s [%.1f s]\n", tag, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::kPass : Status::kFail, std::move(detail)}; }

// --------------------------------------------------------------------------

Outcome gradient_suite() {
  ModelDims d;
  d.layers = 5;
  d.context_dim = 8;
  d.heads = 2;
  d.head_dim = 4;
  d.generic_dim = 6;
  d.projection_dim = 16;
  d.classes = 3;
  double worst = 0.0;
  std::size_t checked = 0;
  std::mt19937_64 rng(2024);
  for (std::uint64_t trial = 0; trial < 4; ++trial) {
    auto params = bertil::init_params<double>(trial, d);
    const auto stack = testutil::random_matrix<double>(5, 8, rng);
    const auto g = testutil::random_vector<double>(6, rng);
    const std::size_t target = trial % 3;
    const bool with_dropout = trial % 2 == 1;
    auto ptrs = bertil::matrices(params);
    const auto r = bertil::check_gradients(
        [&](Tape<double>& t, std::span<const Var<double>> p) {
          bertil::BoundModel<double> b;
          std::size_t i = 0;
          for (std::size_t h = 0; h < d.heads; ++h, i += 3) b.interaction.heads.push_back({p[i], p[i + 1], p[i + 2]});
          b.interaction.residual = p[i++];
          b.head = {p[i], p[i + 1], p[i + 2]};
          std::mt19937_64 drop(trial);
          const bertil::DropoutState ds{with_dropout ? 0.1 : 0.0, with_dropout, &drop};
          return bertil::ops::cross_entropy(bertil::forward(t.input(stack), t.input(g), b, ds).probs, target);
        },
        ptrs);
    worst = std::max(worst, r.max_relative_error);
    checked += r.elements_checked;
  }
  return verdict(worst < 1e-4, "max relative error " + fmt("%.2e", worst) + " over " + std::to_string(checked) +
                                   " parameter elements (limit 1e-4)");
}

Outcome forward_oracle() {
  const ModelDims d;
  const auto params_f = bertil::init_params<float>(17, d);
  const auto params_d = params_f.cast<double>();
  std::mt19937_64 rng(99);
  double worst_d = 0.0, worst_f = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto stack = testutil::random_matrix<float>(5, 768, rng);
    const auto g = testutil::random_vector<float>(300, rng);
    const auto want = oracle::forward(oracle::to_mat(stack), oracle::to_vec(g), params_d);
    const auto got_d = bertil::predict(stack.cast<double>(), g.cast<double>(), params_d);
    const auto got_f = bertil::predict(stack, g, params_f);
    for (std::size_t y = 0; y < 3; ++y) {
      worst_d = std::max(worst_d, std::abs(got_d[y] - want.probs[y]));
      worst_f = std::max(worst_f, std::abs(static_cast<double>(got_f[y]) - want.probs[y]));
    }
  }
  return verdict(worst_d <= 1e-5 && worst_f <= 1e-5,
                 "max |dp| double " + fmt("%.2e", worst_d) + ", float " + fmt("%.2e", worst_f) +
                     " on 100 inputs (limit 1e-5)");
}

Outcome analytic_loss() {
  const double zero = bertil::cross_entropy(Tensor<double>::vector({0, 1, 0}), 1);
  const double third = 1.0 / 3.0;
  const double uniform = bertil::cross_entropy(Tensor<double>::vector({third, third, third}), 0);
  // Through the model: a zero classifier yields the uniform distribution.
  auto params = bertil::init_params<double>(1, ModelDims{});
  params.head.classify.fill(0.0);
  std::mt19937_64 rng(3);
  const auto probs = bertil::predict(testutil::random_matrix<double>(5, 768, rng), testutil::random_vector<double>(300, rng), params);
  const double model_uniform = bertil::cross_entropy(probs, 2);
  const double ln3 = std::log(3.0);
  const bool ok = std::abs(zero) <= 1e-9 && std::abs(uniform - ln3) <= 1e-9 && std::abs(model_uniform - ln3) <= 1e-9;
  return verdict(ok, "one-hot " + fmt("%.1e", zero) + ", uniform - ln3 = " + fmt("%.1e", uniform - ln3) +
                         ", zero-classifier model - ln3 = " + fmt("%.1e", model_uniform - ln3));
}

Tensor<double> permute_rows(const Tensor<double>& x, const std::vector<std::size_t>& perm) {
  Tensor<double> out(x.shape());
  for (std::size_t r = 0; r < perm.size(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(perm[r], c);
  return out;
}

Outcome attention_invariants() {
  const auto params = bertil::init_params<double>(5, ModelDims{});
  std::mt19937_64 rng(7);
  double worst_sum = 0.0, worst_perm = 0.0;
  bool zero_exact = true;
  for (int trial = 0; trial < 50; ++trial) {
    const auto stack = testutil::random_matrix<double>(5, 768, rng, 1.0 + trial % 5);
    const auto& head = params.interaction.heads[trial % 8];
    const auto alpha = bertil::attention_weights(stack, head);
    for (std::size_t m = 0; m < 5; ++m) {
      double s = 0.0;
      for (double v : alpha.row(m)) s += v;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
    auto zero_q = head;
    zero_q.query.fill(0.0);
    const auto uniform = bertil::attention_weights(stack, zero_q);
    for (double v : uniform.data()) zero_exact = zero_exact && v == 0.2;

    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto permuted = permute_rows(stack, perm);
    const auto alpha_p = bertil::attention_weights(permuted, head);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        worst_perm = std::max(worst_perm, std::abs(alpha_p(i, j) - alpha(perm[i], perm[j])));
    const auto refined = permute_rows(bertil::refine_stack(stack, params.interaction), perm);
    worst_perm = std::max(worst_perm, bertil::max_abs_diff(refined, bertil::refine_stack(permuted, params.interaction)));
  }
  return verdict(worst_sum <= 1e-9 && zero_exact && worst_perm <= 1e-9,
                 "row-sum dev " + fmt("%.1e", worst_sum) + ", zero-query rows exactly 0.2: " +
                     (zero_exact ? "yes" : "no") + ", permutation dev " + fmt("%.1e", worst_perm) + " (50 trials)");
}

Outcome overfit() {
  const ModelDims d;
  const auto data = bertil::random_samples(d, 32, 31);
  bertil::TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 500;
  c.seed = 1;
  double acc = 0.0;
  std::size_t epochs = 0;
  bertil::train(c, d, data, [&](const bertil::EpochRecord& r, const bertil::ModelParameters<float>& p) {
    epochs = r.epoch;
    acc = bertil::evaluate(p, data).accuracy;
    return acc < 1.0;
  });
  return verdict(acc == 1.0, "train accuracy " + fmt("%.4f", acc) + " after " + std::to_string(epochs) + " epochs");
}

Outcome separable() {
  ModelDims d;
  d.context_dim = 32;
  d.generic_dim = 16;
  d.heads = 4;
  d.head_dim = 8;
  d.projection_dim = 32;
  bertil::SeparableTask task(d, 11);
  const auto train_set = task.draw_many(2000, "train-");
  const auto test_set = task.draw_many(500, "test-");
  bertil::TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 50;
  c.seed = 5;
  std::size_t first_hit = 0;
  double acc = 0.0;
  bertil::train(c, d, train_set, [&](const bertil::EpochRecord& r, const bertil::ModelParameters<float>& p) {
    acc = bertil::evaluate(p, test_set).accuracy;
    if (!first_hit && acc >= 0.95) first_hit = r.epoch;
    return true;
  });
  return verdict(acc >= 0.95, "test accuracy " + fmt("%.3f", acc) + " after 50 epochs (first >= 0.95 at epoch " +
                                  std::to_string(first_hit) + "); dims 5x32, generic 16, heads 4x8, projection 32");
}

Outcome parameter_count() {
  const ModelDims d;
  const std::size_t closed = d.parameter_count();
  const std::size_t enumerated = bertil::count_parameters(bertil::zero_params<float>(d));
  bool ok = closed == 4482048 && enumerated == 4482048;
  std::mt19937_64 rng(77);
  std::string extra;
  for (int i = 0; i < 3; ++i) {
    ModelDims r;
    r.layers = 1 + rng() % 8;
    r.heads = 1 + rng() % 8;
    r.head_dim = 1 + rng() % 32;
    r.context_dim = r.heads * r.head_dim;
    r.generic_dim = 1 + rng() % 64;
    r.projection_dim = 1 + rng() % 64;
    r.classes = 2 + rng() % 3;
    const std::size_t e = bertil::count_parameters(bertil::zero_params<float>(r));
    ok = ok && e == r.parameter_count();
    extra += " " + std::to_string(e);
  }
  return verdict(ok, "default " + std::to_string(enumerated) + " (" + fmt("%.3f", bertil::parameter_size_mb(enumerated)) +
                         " MB); random configs" + extra + " match closed form");
}

Outcome fixture_tallies() {
  struct F {
    const char* file;
    bertil::DatasetKind kind;
    bertil::ReferenceTallies expected;
  };
  const F fixtures[] = {
      {"semeval14_fixture.xml", bertil::DatasetKind::kSemEval14,
       {{{"positive", 8}, {"negative", 6}, {"neutral", 4}, {"conflict", 2}}, 0, 13}},
      {"semeval16_fixture.xml", bertil::DatasetKind::kSemEval16, {{{"positive", 11}, {"negative", 6}, {"neutral", 3}}, 0, 15}},
      {"sentihood_fixture.json", bertil::DatasetKind::kSentiHood, {{{"positive", 13}, {"negative", 7}}, 0, 15}},
  };
  bool ok = true;
  std::string detail;
  for (const auto& f : fixtures) {
    const auto r = bertil::parse_dataset(f.kind, testutil::data_dir() / f.file, bertil::Split::kTrain);
    const auto v = bertil::verify_tallies(r, f.expected);
    ok = ok && v.ok() && r.examples.size() == 20 && r.sentence_count == f.expected.total;
    detail += std::string(detail.empty() ? "" : ", ") + bertil::to_string(f.kind) + (v.ok() ? " ok" : " MISMATCH");
  }
  return verdict(ok, detail + " (20 examples each, hand counts)");
}

Outcome official_tallies() {
  struct Src {
    const char* env;
    bertil::DatasetKind kind;
    bertil::Split split;
  };
  const Src sources[] = {
      {"BERTIL_SEMEVAL14_TRAIN", bertil::DatasetKind::kSemEval14, bertil::Split::kTrain},
      {"BERTIL_SEMEVAL14_TEST", bertil::DatasetKind::kSemEval14, bertil::Split::kTest},
      {"BERTIL_SEMEVAL16_TRAIN", bertil::DatasetKind::kSemEval16, bertil::Split::kTrain},
      {"BERTIL_SEMEVAL16_TEST", bertil::DatasetKind::kSemEval16, bertil::Split::kTest},
      {"BERTIL_SENTIHOOD_TRAIN", bertil::DatasetKind::kSentiHood, bertil::Split::kTrain},
      {"BERTIL_SENTIHOOD_TEST", bertil::DatasetKind::kSentiHood, bertil::Split::kTest},
  };
  bool any = false, ok = true;
  std::string detail;
  for (const auto& s : sources) {
    const char* path = std::getenv(s.env);
    if (!path || !*path) continue;
    any = true;
    const auto r = bertil::parse_dataset(s.kind, path, s.split);
    const auto v = bertil::verify_tallies(r, bertil::reference_tallies(s.kind, s.split));
    ok = ok && v.ok();
    detail += " " + bertil::to_string(s.kind) + "/" + bertil::to_string(s.split) + ":";
    for (const auto& c : v.cells) detail += " " + c.label + " " + std::to_string(c.found) + "/" + std::to_string(c.expected);
  }
  if (!any) return {Status::kSkip, "no official files supplied (set BERTIL_SEMEVAL14_TRAIN etc.)"};
  return verdict(ok, "found/expected" + detail);
}

Outcome roundtrips() {
  testutil::TempDir dir("accept");
  std::mt19937_64 rng(12);
  std::vector<bertil::ArchiveRecord> records;
  for (int i = 0; i < 6; ++i)
    records.push_back({"r" + std::to_string(i), static_cast<std::uint8_t>(i % 3), testutil::random_matrix<float>(5, 768, rng),
                       testutil::random_vector<float>(300, rng), i == 4});
  bertil::write_archive(dir / "a.aelc", records);
  const auto back = bertil::read_archive(dir / "a.aelc");
  bool ok = back.records == records;
  bertil::write_archive(dir / "b.aelc", back.records, back.meta);
  ok = ok && testutil::read_file(dir / "a.aelc") == testutil::read_file(dir / "b.aelc");

  const auto params = bertil::init_params<float>(8, ModelDims{});
  bertil::save_checkpoint(dir / "a.aelm", params, {{"k", 1}});
  const auto ck = bertil::load_checkpoint(dir / "a.aelm");
  ok = ok && ck.params == params;
  bertil::save_checkpoint(dir / "b.aelm", ck.params, ck.header);
  ok = ok && testutil::read_file(dir / "a.aelm") == testutil::read_file(dir / "b.aelm");

  auto rejected = [](const std::string& bytes, auto reader) {
    std::istringstream in(bytes);
    try {
      reader(in);
    } catch (const bertil::FormatError&) {
      return true;
    }
    return false;
  };
  auto read_a = [](std::istream& in) { bertil::read_archive(in); };
  auto read_c = [](std::istream& in) { bertil::load_checkpoint(in); };
  const std::string arch = testutil::read_file(dir / "a.aelc");
  const std::string ckpt = testutil::read_file(dir / "a.aelm");
  std::string arch_magic = arch, ckpt_magic = ckpt;
  arch_magic[0] = 'Q';
  ckpt_magic[3] = 'Q';
  std::string arch_count = arch;
  arch_count[8] = 7;
  const bool corrupt = rejected(arch_magic, read_a) && rejected(arch.substr(0, arch.size() / 2), read_a) &&
                       rejected(arch_count, read_a) && rejected(ckpt_magic, read_c) &&
                       rejected(ckpt.substr(0, ckpt.size() - 1), read_c);
  return verdict(ok && corrupt, std::string("read-after-write ") + (ok ? "bit-identical" : "DIFFERS") +
                                    "; corrupt magic and truncation " + (corrupt ? "rejected" : "NOT rejected"));
}

Outcome efficiency() {
  const auto rows = bertil::read_side_table(testutil::data_dir() / "side_table.csv");
  auto find = [&](const std::string& name) {
    return *std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.name == name; });
  };
  // Hand-computed: 79.5/1119, 79.5/0.08, 86.01/3131, 86.01/0.32.
  const struct {
    const char* name;
    double economy;
    double green;
  } want[] = {{"BERT-IL", 0.0710456, 993.75}, {"BAT", 0.0274705, 268.78125}};
  double worst = 0.0;
  for (const auto& w : want) {
    const auto r = find(w.name);
    worst = std::max(worst, std::abs(r.economy_score - w.economy) / w.economy);
    worst = std::max(worst, std::abs(*r.green_score - w.green) / w.green);
  }
  const auto zero = bertil::make_comparison_row("zero", 0.0, 10.0, 0.1);
  const bool ok = worst <= 1e-3 && zero.economy_score == 0.0 && *zero.green_score == 0.0;
  return verdict(ok, "max relative deviation " + fmt("%.1e", worst) + " (limit 1e-3)");
}

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd =
      "cd '" + dir.string() + "' && '" + std::string(BERTIL_CLI_PATH) + "' " + args + " > cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  testutil::TempDir root("determinism");
  const std::string input = (testutil::data_dir() / "semeval14_fixture.xml").string();
  const std::vector<std::string> steps = {
      "prepare --dataset semeval14 --input '" + input + "' --split train --out train.jsonl",
      "synth --manifest train.jsonl --out train.aelc --seed 1",
      "train --manifest train.jsonl --archive train.aelc --out model.aelm --epochs 3 --seed 7",
      "eval --checkpoint model.aelm --manifest train.jsonl --archive train.aelc --split train --report report.json "
      "--name run --timing-samples 0",
  };
  for (const char* run : {"a", "b"}) {
    fs::create_directories(root / run);
    for (const auto& s : steps) {
      const int code = run_cli(root / run, s);
      if (code != 0) return {Status::kFail, "step '" + s.substr(0, s.find(' ')) + "' exited " + std::to_string(code)};
    }
  }
  std::string detail;
  bool ok = true;
  for (const char* f : {"train.jsonl", "train.aelc", "model.aelm", "model.aelm.log.json", "report.json"}) {
    const bool same = testutil::read_file(root / "a" / f) == testutil::read_file(root / "b" / f);
    ok = ok && same;
    detail += std::string(detail.empty() ? "" : ", ") + f + (same ? " identical" : " DIFFERS");
  }
  return verdict(ok, detail);
}

}  // namespace

int main() {
  std::printf("acceptance run, bertil %s\n", std::string(bertil::kToolVersion).c_str());
  report("gradient suite", gradient_suite, 60.0);
  report("forward oracle equivalence", forward_oracle, 30.0);
  report("analytic loss values", analytic_loss);
  report("attention invariants", attention_invariants);
  report("overfit capacity", overfit, 300.0);
  report("separable synthetic task", separable, 600.0);
  report("parameter count", parameter_count);
  report("dataset tallies (bundled fixtures)", fixture_tallies);
  report("dataset tallies (official files)", official_tallies);
  report("archive + checkpoint roundtrips", roundtrips);
  report("efficiency report", efficiency);
  report("determinism", determinism);
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
