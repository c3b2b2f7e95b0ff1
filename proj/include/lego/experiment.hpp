#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lego/dataset.hpp"
#include "lego/harness.hpp"
#include "lego/metrics.hpp"

namespace lego {

enum class Scale { paper, desk };

std::string to_string(Scale scale);
Scale scale_from_string(const std::string& text);

struct DataConfig {
  int train_size = 5000;
  int test_size = 1000;
  int train_length = 4;
  int test_length = 6;
  int num_symbols = kDefaultSymbols;
  std::uint64_t seed = 1;
  // Read <dir>/<experience>_{train,test}.tsv instead of generating in memory.
  std::string dir;
};

struct ModelChoice {
  std::string family = "shared";  // shared = ALBERT-style, unshared = BERT-style
  int layers = 6;
  int heads = 1;
  int hidden = 0;  // 0 = automatic
  int ffn = 0;     // 0 = 4 * hidden
  double dropout = 0.0;
};

struct SweepGrid {
  std::vector<int> layers = {2, 4, 6, 8, 12};
  std::vector<int> heads = {1, 2, 4, 8, 12};
  std::vector<std::string> families = {"shared", "unshared"};
};

struct ExperimentConfig {
  Scale scale = Scale::desk;
  std::string group = "D3";
  DataConfig data;
  ModelChoice model;
  TrainConfig train;
  std::vector<double> replay = {0.0};
  SweepGrid sweep;
  int probe_size = 50;
  std::string out = "runs";

  void validate() const;  // ConfigError
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Every setting of a scale preset as a JSON document.
nlohmann::json preset_json(Scale scale);

// Preset for doc["scale"] (desk when absent) with `doc` merged on top.
ExperimentConfig resolve_config(const nlohmann::json& doc);

GroupPtr make_group(const std::string& name);
std::vector<ExperienceSpec> build_schedule(const ExperimentConfig& config, const GroupPtr& group);
ModelConfig build_model_config(const ExperimentConfig& config, int vocab_size, int num_classes);

struct ExperienceData {
  Dataset train;
  Dataset test;
};

// Seeds depend on the experience name, so an experience gets the same data
// in every schedule it appears in.
std::uint64_t dataset_seed(std::uint64_t base, const std::string& experience, bool test);
std::vector<ExperienceData> load_or_generate(const ExperimentConfig& config, const std::vector<ExperienceSpec>& schedule);

// Worker count from LEGO_WORKERS (default 1).
int worker_count();
// Runs job(0..n-1) on up to `workers` threads; the first exception is rethrown.
void parallel_for(int n, int workers, const std::function<void(int)>& job);

using Log = std::function<void(const std::string&)>;

// ---- generate --------------------------------------------------------------

struct GeneratedFile {
  std::string experience;
  std::string split;
  std::filesystem::path path;
  std::uint64_t seed = 0;
  int count = 0;
  std::string digest;
};

// Writes <out>/data/<experience>_{train,test}.tsv and data/manifest.json.
std::vector<GeneratedFile> cmd_generate(const ExperimentConfig& config);

// ---- train -----------------------------------------------------------------

struct RunResult {
  std::filesystem::path dir;
  std::uint64_t seed = 0;
  double replay_fraction = 0.0;
  RunRecord record;
  std::optional<CLMetrics> metrics;  // empty when phases are shorter than the metric window
};

std::filesystem::path run_subdirectory(const ExperimentConfig& config, double replay, std::uint64_t seed);

// One run per (seed, replay fraction). Runs of one seed share their first
// phase and branch at the first boundary. Writes one directory per run and
// <out>/summary.csv.
std::vector<RunResult> cmd_train(const ExperimentConfig& config, const Log& log = {});

// compute_metrics, or nothing when the run is too short for the 10-epoch windows.
std::optional<CLMetrics> metrics_if_available(const RunRecord& record);

// Writes config.json, metrics.csv, checkpoints/manifest.csv and summary.json.
void write_run_directory(const std::filesystem::path& dir, const ExperimentConfig& config, const RunRecord& record,
                         double replay_fraction);

// ---- sweep -----------------------------------------------------------------

struct SweepRow {
  std::string family;
  int layers = 0;
  int heads = 0;
  int hidden = 0;
  std::uint64_t seed = 0;
  std::optional<CLMetrics> metrics;
  std::string status;  // "trained", "resumed" or "error: ..."
};

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, const Log& log = {});

// ---- analyze ---------------------------------------------------------------

struct RunAnalysis {
  std::filesystem::path dir;
  // (checkpoint epoch, per-layer score)
  std::vector<std::pair<int, std::vector<double>>> preceding;
  std::vector<std::pair<int, std::vector<std::vector<double>>>> first_clause;
  // (before epoch, after epoch, per-layer cosine)
  struct Cosine {
    int before = 0;
    int after = 0;
    std::vector<double> per_layer;
  };
  std::vector<Cosine> cosine;
  std::optional<CLMetrics> metrics;
};

// Writes <run>/analysis/{attention_preceding,attention_first_clause,
// attention_cosine,cl_metrics}.csv for every run directory.
std::vector<RunAnalysis> cmd_analyze(const std::vector<std::filesystem::path>& runs, int probe_size = 50);

// ---- plot ------------------------------------------------------------------

// Emits one SVG per input table into `out_dir` (plus a comparison figure
// when several per-epoch tables are given). Returns the files written.
std::vector<std::filesystem::path> cmd_plot(const std::vector<std::filesystem::path>& tables,
                                            const std::filesystem::path& out_dir);

}  // namespace lego
