// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.
//
// Exact criteria re-run the matching unit oracle cases (linked into this
// binary) under a wall-clock limit. Trend criteria train the desk preset.

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lego/checkpoint.hpp"
#include "lego/errors.hpp"
#include "lego/experiment.hpp"
#include "lego/metrics.hpp"

namespace fs = std::filesystem;
using namespace lego;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

// Counts the oracle cases that actually ran so an empty filter cannot pass.
int cases_run = 0;

struct CaseCounter : doctest::IReporter {
  explicit CaseCounter(const doctest::ContextOptions&) {}
  void report_query(const doctest::QueryData&) override {}
  void test_run_start() override {}
  void test_run_end(const doctest::TestRunStats&) override {}
  void test_case_start(const doctest::TestCaseData&) override { ++cases_run; }
  void test_case_reenter(const doctest::TestCaseData&) override {}
  void test_case_end(const doctest::CurrentTestCaseStats&) override {}
  void test_case_exception(const doctest::TestCaseException&) override {}
  void subcase_start(const doctest::SubcaseSignature&) override {}
  void subcase_end() override {}
  void log_assert(const doctest::AssertData&) override {}
  void log_message(const doctest::MessageData&) override {}
  void test_case_skipped(const doctest::TestCaseData&) override {}
};

void report(int id, const std::string& name, const Outcome& o) {
  std::printf("criterion %2d %-28s %s  %s\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int prec = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

// Runs the unit cases matching `filter` (doctest wildcard list); exactly
// `expected` cases must match.
Outcome oracle_cases(const std::string& filter, int expected, double limit_s) {
  cases_run = 0;
  const auto t0 = std::chrono::steady_clock::now();
  doctest::Context ctx;
  ctx.setOption("test-case", filter.c_str());
  ctx.setOption("minimal", true);
  ctx.setOption("no-intro", true);
  const int rc = ctx.run();
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = rc == 0 && cases_run == expected && secs <= limit_s;
  o.detail = std::to_string(cases_run) + "/" + std::to_string(expected) + " oracle cases " +
             (rc == 0 ? "passed" : "FAILED") + ", " + num(secs, 2) + "s (limit " + num(limit_s, 0) + "s)";
  return o;
}

struct TrendRuns {
  // [seed] per family / branch
  std::vector<RunRecord> albert_p1;    // phase 1 only (copy taken at the boundary)
  std::vector<RunRecord> albert_r0;    // phases 1-2, replay 0
  std::vector<RunRecord> albert_r10;   // phases 1-2, replay 0.10 from the boundary
  std::vector<RunRecord> bert_p1;
  double seconds_albert = 0.0;         // phase-1 time of one ALBERT run
};

TrendRuns run_trends(const fs::path& work, const std::vector<std::uint64_t>& seeds, int epochs) {
  ExperimentConfig base = resolve_config(nlohmann::json::object());
  if (epochs > 0) base.train.epochs_per_experience = epochs;
  base.out = (work / "trend").string();
  const auto group = make_group(base.group);
  const auto schedule = build_schedule(base, group);
  const auto data = load_or_generate(base, schedule);
  // Forgetting and replay only involve the first two experiences.
  std::vector<DatasetPtr> train, test;
  for (int i = 0; i < 2; ++i) {
    train.push_back(borrow(data[static_cast<std::size_t>(i)].train));
    test.push_back(borrow(data[static_cast<std::size_t>(i)].test));
  }
  const int vocab = data[0].train.vocab.size();

  TrendRuns out;
  for (const bool shared : {true, false}) {
    ExperimentConfig cfg = base;
    cfg.model.family = shared ? "shared" : "unshared";
    const auto mc = build_model_config(cfg, vocab, group->order());
    for (const auto seed : seeds) {
      TrainConfig tc = cfg.train;
      tc.seeds = {seed};
      tc.replay_fraction = 0.0;
      SequentialTrainer t(Model(mc, seed), train, test, tc, seed);
      t.on_epoch = [&](const EpochReport& r) {
        std::fprintf(stderr, "  %s seed %llu epoch %d  E%d a4 %.3f a5 %.3f  loss %.4f  %.1fs\n", mc.family().c_str(),
                     static_cast<unsigned long long>(seed), r.global_epoch, r.experience,
                     r.record->C(4, r.experience, r.global_epoch), r.record->C(5, 1, r.global_epoch), r.train_loss,
                     r.seconds);
      };
      const auto t0 = std::chrono::steady_clock::now();
      t.run_phase();
      if (!shared) {
        out.bert_p1.push_back(t.record());
        continue;
      }
      if (out.seconds_albert == 0.0) out.seconds_albert = seconds_since(t0);
      out.albert_p1.push_back(t.record());
      SequentialTrainer replay = t.branch();
      replay.on_epoch = t.on_epoch;
      replay.set_replay_fraction(0.10);
      t.run_phase();
      out.albert_r0.push_back(t.record());
      replay.run_phase();
      out.albert_r10.push_back(replay.record());
    }
  }
  return out;
}

double max_over_phase(const RunRecord& r, int j, int experience, int phase) {
  double best = 0.0;
  for (int k = r.phase_start(phase); k <= r.phase_end(phase); ++k) best = std::max(best, r.C(j, experience, k));
  return best;
}

std::string seed_list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + num(v[i]);
  return s + "]";
}

Outcome determinism(const fs::path& work) {
  nlohmann::json doc = {{"data", {{"train_size", 300}, {"test_size", 60}}},
                        {"model", {{"layers", 2}, {"hidden", 32}}},
                        {"train", {{"epochs_per_experience", 3}, {"batch_size", 50}, {"seeds", {7}}}}};
  std::vector<std::string> csv, manifest;
  for (const char* name : {"a", "b"}) {
    doc["out"] = (work / "determinism" / name).string();
    const auto cfg = resolve_config(doc);
    const auto runs = cmd_train(cfg);
    if (runs.size() != 1) return {false, "expected one run"};
    csv.push_back(read_file_bytes(runs[0].dir / "metrics.csv"));
    manifest.push_back(read_file_bytes(runs[0].dir / "checkpoints" / "manifest.csv"));
  }
  const bool same_csv = csv[0] == csv[1] && !csv[0].empty();
  const bool same_digests = manifest[0] == manifest[1] && !manifest[0].empty();
  return {same_csv && same_digests, std::string("metrics.csv ") + (same_csv ? "identical" : "differs") +
                                        ", checkpoint digests " + (same_digests ? "identical" : "differ")};
}

}  // namespace

DOCTEST_REGISTER_LISTENER("case-counter", 1, CaseCounter);

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = "acceptance_runs";
  int epochs = 0;
  bool skip_trends = false;
  app.add_option("--work", work, "scratch directory for training runs");
  app.add_option("--epochs", epochs, "override epochs per experience for the trend runs (0 = preset)");
  app.add_flag("--skip-trends", skip_trends, "report criteria 6-9 as skipped failures");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);

  report(1, "group correctness",
         oracle_cases("D3 composition facts*,identity? inverse*,element orders,validate_group*,worked examples", 5, 1));
  report(2, "data oracle", oracle_cases("exhaustive T=3 oracle agreement*", 1, 10));
  report(3, "autodiff", oracle_cases("finite differences for every op,full minimal model gradient check", 2, 30));
  report(4, "metric unit suite", oracle_cases("tau,task and generalization accuracy,forward transfer,"
                                              "performance maintenance",
                                              4, 1));
  report(5, "attention oracle", oracle_cases("attention scores on hand-built patterns,attention scores equal the "
                                             "brute-force*,cosine on identical model checkpoints",
                                             3, 1));

  if (skip_trends) {
    for (int id = 6; id <= 9; ++id) report(id, "trend", {false, "skipped"});
  } else {
    const std::vector<std::uint64_t> seeds = {1, 2};
    const auto t0 = std::chrono::steady_clock::now();
    const auto runs = run_trends(work, seeds, epochs);
    std::fprintf(stderr, "trend runs took %.0fs\n", seconds_since(t0));

    std::vector<double> a4_p1, a4_after, pm0, pm10, e2_a4, a5_albert, a5_bert;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const auto& p1 = runs.albert_p1[s];
      const int end1 = p1.phase_end(1);
      a4_p1.push_back(max_over_phase(p1, 4, 1, 1));
      a5_albert.push_back(p1.C(5, 1, end1));
      a5_bert.push_back(runs.bert_p1[s].C(5, 1, end1));
      const auto& r0 = runs.albert_r0[s];
      a4_after.push_back(r0.C(4, 1, r0.phase_end(2)));
      pm0.push_back(performance_maintenance(r0).corrected);
      const auto& r10 = runs.albert_r10[s];
      pm10.push_back(performance_maintenance(r10).corrected);
      e2_a4.push_back(max_over_phase(r10, 4, 2, 2));
    }
    auto all = [](const std::vector<double>& v, auto pred) { return std::all_of(v.begin(), v.end(), pred); };
    const double minutes = runs.seconds_albert / 60.0;

    report(6, "learnability",
           {all(a4_p1, [](double x) { return x >= 0.95; }),
            "best E1 a4 in phase 1 per seed " + seed_list(a4_p1) + " (need >= 0.95), one run " + num(minutes, 1) +
                " min (target 30)"});
    report(7, "catastrophic forgetting",
           {all(a4_after, [](double x) { return x < 0.3; }) && all(pm0, [](double x) { return x <= -0.5; }),
            "E1 a4 after phase 2 " + seed_list(a4_after) + " (need < 0.3), PM_corrected " + seed_list(pm0) +
                " (need <= -0.5)"});
    report(8, "replay rescue",
           {all(pm10, [](double x) { return x >= -0.1; }) && all(e2_a4, [](double x) { return x >= 0.95; }),
            "PM_corrected " + seed_list(pm10) + " (need >= -0.1), best E2 a4 " + seed_list(e2_a4) +
                " (need >= 0.95)"});
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    const double gap = mean(a5_albert) - mean(a5_bert);
    report(9, "generalization gap",
           {gap >= 0.10, "ALBERT a5 " + seed_list(a5_albert) + " mean " + num(mean(a5_albert)) + ", BERT a5 " +
                             seed_list(a5_bert) + " mean " + num(mean(a5_bert)) + ", gap " + num(gap) +
                             " (need >= 0.10)"});
  }

  try {
    report(10, "pipeline determinism", determinism(work));
  } catch (const std::exception& e) {
    report(10, "pipeline determinism", {false, e.what()});
  }
  report(11, "compositional plumbing", oracle_cases("compositional? full and incremental experiences", 1, 10));

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
