// Command-line driver: generate, train, sweep, analyze, plot.
#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>

#include "lego/config.hpp"
#include "lego/errors.hpp"
#include "lego/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;
constexpr int kExitAnalysis = 5;

struct Flags {
  std::string config;
  std::string scale;
  std::string family;
  int layers = 0;
  int heads = 0;
  std::string replay;
  std::string seeds;
  std::string schedule;
  std::string out;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& s, const char* flag) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw lego::ConfigError(std::string(flag) + ": not a number: '" + s + "'");
}

// "4" means seeds 1..4; "3,7" is an explicit list.
json parse_seeds(const std::string& text) {
  const auto items = split_list(text);
  if (items.empty()) throw lego::ConfigError("--seeds: empty");
  json seeds = json::array();
  for (const auto& item : items) {
    const double v = parse_double(item, "--seeds");
    if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
      throw lego::ConfigError("--seeds: not a non-negative integer: '" + item + "'");
    }
    seeds.push_back(static_cast<std::uint64_t>(v));
  }
  if (items.size() == 1 && text.find(',') == std::string::npos) {
    const auto n = seeds[0].get<std::uint64_t>();
    if (n == 0) throw lego::ConfigError("--seeds: count must be positive");
    seeds = json::array();
    for (std::uint64_t s = 1; s <= n; ++s) seeds.push_back(s);
  }
  return seeds;
}

lego::ExperimentConfig resolve(const Flags& f) {
  json doc = f.config.empty() ? json::object() : lego::load_config_file(f.config);
  json patch = json::object();
  if (!f.scale.empty()) patch["scale"] = f.scale;
  if (!f.family.empty()) patch["model"]["family"] = f.family;
  if (f.layers > 0) patch["model"]["layers"] = f.layers;
  if (f.heads > 0) patch["model"]["heads"] = f.heads;
  if (!f.replay.empty()) {
    json r = json::array();
    for (const auto& item : split_list(f.replay)) r.push_back(parse_double(item, "--replay"));
    patch["replay"] = r;
  }
  if (!f.seeds.empty()) patch["seeds"] = parse_seeds(f.seeds);
  if (!f.schedule.empty()) patch["schedule"] = f.schedule;
  if (!f.out.empty()) patch["out"] = f.out;
  doc.merge_patch(patch);
  return lego::resolve_config(doc);
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "TOML or JSON config file");
  cmd->add_option("--scale", f.scale, "Preset: paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--family", f.family, "shared (ALBERT-style) or unshared (BERT-style)")
      ->check(CLI::IsMember({"shared", "unshared"}));
  cmd->add_option("--layers", f.layers, "Number of layers")->check(CLI::PositiveNumber);
  cmd->add_option("--heads", f.heads, "Attention heads")->check(CLI::PositiveNumber);
  cmd->add_option("--replay", f.replay, "Replay fraction(s), comma separated");
  cmd->add_option("--seeds", f.seeds, "Seed count N (seeds 1..N) or a comma-separated list");
  cmd->add_option("--schedule", f.schedule, "flipflop, compositional, incremental or full")
      ->check(CLI::IsMember({"flipflop", "compositional", "incremental", "full"}));
  cmd->add_option("--out", f.out, "Output directory");
}

void log_line(const std::string& line) { std::cerr << line << '\n'; }

int exit_code(lego::ErrorCategory c) {
  switch (c) {
    case lego::ErrorCategory::config: return kExitConfig;
    case lego::ErrorCategory::data: return kExitData;
    case lego::ErrorCategory::training: return kExitTraining;
    case lego::ErrorCategory::analysis: return kExitAnalysis;
  }
  return kExitOther;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual learning on LEGO group-composition tasks"};
  app.require_subcommand(1);
  Flags flags;

  auto* generate = app.add_subcommand("generate", "Write train/test datasets for every experience");
  auto* train = app.add_subcommand("train", "Sequential training runs, one per seed and replay fraction");
  auto* sweep = app.add_subcommand("sweep", "Layers x heads x family sweep (resumable)");
  for (auto* cmd : {generate, train, sweep}) add_common(cmd, flags);

  auto* analyze = app.add_subcommand("analyze", "Attention analyses over run directories");
  std::vector<std::string> runs;
  int probe_size = 50;
  analyze->add_option("runs", runs, "Run directories")->required();
  analyze->add_option("--probe-size", probe_size, "Probe examples")->check(CLI::PositiveNumber);

  auto* plot = app.add_subcommand("plot", "SVG figures from CSV tables");
  std::vector<std::string> tables;
  std::string plot_out = "figures";
  plot->add_option("tables", tables, "CSV tables")->required();
  plot->add_option("--out", plot_out, "Figure directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*generate) {
      for (const auto& f : lego::cmd_generate(resolve(flags))) {
        std::cout << f.path.string() << '\t' << f.count << '\t' << f.digest << '\n';
      }
    } else if (*train) {
      for (const auto& r : lego::cmd_train(resolve(flags), log_line)) {
        std::cout << r.dir.string();
        if (r.metrics) std::cout << "\tTA=" << r.metrics->TA << "\tPM=" << r.metrics->PM.corrected;
        std::cout << '\n';
      }
    } else if (*sweep) {
      for (const auto& row : lego::cmd_sweep(resolve(flags), log_line)) {
        std::cout << row.family << " L" << row.layers << " H" << row.heads << " seed" << row.seed << '\t'
                  << row.status << '\n';
      }
    } else if (*analyze) {
      std::vector<fs::path> dirs(runs.begin(), runs.end());
      for (const auto& a : lego::cmd_analyze(dirs, probe_size)) std::cout << (a.dir / "analysis").string() << '\n';
    } else if (*plot) {
      std::vector<fs::path> paths(tables.begin(), tables.end());
      for (const auto& p : lego::cmd_plot(paths, plot_out)) std::cout << p.string() << '\n';
    }
  } catch (const lego::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return 0;
}
