#include "lego/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "lego/errors.hpp"

namespace fs = std::filesystem;

namespace lego {

namespace {

// Learning rate and annealing period of the desk preset: 1,000 optimizer
// steps per phase, against 12,000 for the paper preset.
constexpr double kDeskLr = 1e-3;
constexpr int kDeskTMax = 50;
constexpr int kDeskWarmup = 200;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw AnalysisError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("write failed for " + path.string());
}

std::string metrics_header() { return "TA,GA,FT,FT_log10,FT_flag,PM_corrected,PM_literal,alpha"; }

std::string metrics_cells(const std::optional<CLMetrics>& metrics) {
  if (!metrics) return ",,,,,,,";
  const CLMetrics& m = *metrics;
  std::string s = fmt(m.TA) + "," + fmt(m.GA) + ",";
  if (m.has_transfer) {
    s += fmt(m.FT.value) + "," + fmt(std::log10(m.FT.value)) + "," + (m.FT.flag ? "1" : "0") + "," +
         fmt(m.PM.corrected) + "," + fmt(m.PM.literal) + ",";
  } else {
    s += ",,,,,";
  }
  return s + fmt(m.alpha);
}

}  // namespace

std::string to_string(Scale scale) { return scale == Scale::paper ? "paper" : "desk"; }

Scale scale_from_string(const std::string& text) {
  if (text == "paper") return Scale::paper;
  if (text == "desk") return Scale::desk;
  throw ConfigError("unknown scale '" + text + "' (expected paper or desk)");
}

void ExperimentConfig::validate() const {
  if (model.family != "shared" && model.family != "unshared") {
    throw ConfigError("unknown model family '" + model.family + "' (expected shared or unshared)");
  }
  if (model.layers < 1 || model.heads < 1) throw ConfigError("layers and heads must be positive");
  if (data.train_size < 1 || data.test_size < 1) throw ConfigError("dataset sizes must be positive");
  if (data.train_length < 2 || data.test_length < data.train_length) {
    throw ConfigError("need 2 <= train_length <= test_length");
  }
  if (data.test_length < 5) throw ConfigError("test_length must be at least 5 so a_4 and a_5 are evaluated");
  if (replay.empty()) throw ConfigError("replay list is empty");
  for (double r : replay) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("replay fraction " + fmt(r) + " outside [0, 1]");
  }
  if (probe_size < 1) throw ConfigError("probe_size must be positive");
  make_group(group);
  if (sweep.layers.empty() || sweep.heads.empty() || sweep.families.empty()) throw ConfigError("empty sweep grid");
  train.validate(static_cast<std::size_t>(data.train_size));
  std::set<std::uint64_t> distinct(train.seeds.begin(), train.seeds.end());
  if (distinct.size() != train.seeds.size()) throw ConfigError("seeds must be distinct");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json train = c.train;
  const auto seeds = train["seeds"];
  const auto schedule = train["schedule"];
  train.erase("seeds");
  train.erase("schedule");
  j = nlohmann::json{
      {"scale", to_string(c.scale)},
      {"group", c.group},
      {"schedule", schedule},
      {"seeds", seeds},
      {"replay", c.replay},
      {"out", c.out},
      {"probe_size", c.probe_size},
      {"data",
       {{"train_size", c.data.train_size},
        {"test_size", c.data.test_size},
        {"train_length", c.data.train_length},
        {"test_length", c.data.test_length},
        {"num_symbols", c.data.num_symbols},
        {"seed", c.data.seed},
        {"dir", c.data.dir}}},
      {"model",
       {{"family", c.model.family},
        {"layers", c.model.layers},
        {"heads", c.model.heads},
        {"hidden", c.model.hidden},
        {"ffn", c.model.ffn},
        {"dropout", c.model.dropout}}},
      {"train", train},
      {"sweep", {{"layers", c.sweep.layers}, {"heads", c.sweep.heads}, {"families", c.sweep.families}}}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static const std::set<std::string> known = {"scale", "group", "schedule", "seeds", "replay", "out",
                                              "probe_size", "data", "model", "train", "sweep"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    c.scale = scale_from_string(j.value("scale", std::string("desk")));
    c.group = j.value("group", c.group);
    c.out = j.value("out", c.out);
    c.probe_size = j.value("probe_size", c.probe_size);
    if (j.contains("replay")) {
      const auto& r = j.at("replay");
      c.replay = r.is_array() ? r.get<std::vector<double>>() : std::vector<double>{r.get<double>()};
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.train_size = d.value("train_size", c.data.train_size);
      c.data.test_size = d.value("test_size", c.data.test_size);
      c.data.train_length = d.value("train_length", c.data.train_length);
      c.data.test_length = d.value("test_length", c.data.test_length);
      c.data.num_symbols = d.value("num_symbols", c.data.num_symbols);
      c.data.seed = d.value("seed", c.data.seed);
      c.data.dir = d.value("dir", c.data.dir);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model.family = m.value("family", c.model.family);
      c.model.layers = m.value("layers", c.model.layers);
      c.model.heads = m.value("heads", c.model.heads);
      c.model.hidden = m.value("hidden", c.model.hidden);
      c.model.ffn = m.value("ffn", c.model.ffn);
      c.model.dropout = m.value("dropout", c.model.dropout);
    }
    nlohmann::json train = j.value("train", nlohmann::json::object());
    if (j.contains("seeds")) train["seeds"] = j.at("seeds");
    if (j.contains("schedule")) train["schedule"] = j.at("schedule");
    c.train = train.get<TrainConfig>();
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      c.sweep.layers = s.value("layers", c.sweep.layers);
      c.sweep.heads = s.value("heads", c.sweep.heads);
      c.sweep.families = s.value("families", c.sweep.families);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
}

nlohmann::json preset_json(Scale scale) {
  ExperimentConfig c;
  c.scale = scale;
  if (scale == Scale::paper) {
    c.data.train_size = 60000;
    c.data.test_size = 6000;
    c.train.epochs_per_experience = 100;
    c.train.batch_size = 500;
    c.train.lr.base_lr = 5e-5;
    c.train.lr.t_max = 200;
    c.train.seeds = {1, 2, 3, 4};
  } else {
    c.data.train_size = 5000;
    c.data.test_size = 1000;
    c.train.epochs_per_experience = 50;
    c.train.batch_size = 250;
    c.train.lr.base_lr = kDeskLr;
    c.train.lr.t_max = kDeskTMax;
    c.train.lr.warmup_steps = kDeskWarmup;
    c.train.seeds = {1, 2};
  }
  return c;
}

ExperimentConfig resolve_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a key/value document");
  const Scale scale = scale_from_string(doc.value("scale", std::string("desk")));
  // seeds and schedule may also be written under [train]; lift them so the
  // preset's top-level values do not shadow them.
  nlohmann::json patch = doc;
  if (patch.contains("train") && patch["train"].is_object()) {
    for (const char* key : {"seeds", "schedule"}) {
      if (!patch["train"].contains(key)) continue;
      if (patch.contains(key)) throw ConfigError(std::string("'") + key + "' is given both at top level and in train");
      patch[key] = patch["train"][key];
      patch["train"].erase(key);
    }
  }
  nlohmann::json merged = preset_json(scale);
  merged.merge_patch(patch);
  auto c = merged.get<ExperimentConfig>();
  c.validate();
  return c;
}

GroupPtr make_group(const std::string& name) {
  if (name.size() >= 2 && (name[0] == 'D' || name[0] == 'd')) {
    try {
      std::size_t used = 0;
      const int k = std::stoi(name.substr(1), &used);
      if (used == name.size() - 1) return std::make_shared<const GroupSpec>(build_dihedral(k));
    } catch (const std::invalid_argument&) {
    } catch (const std::out_of_range&) {
    }
  }
  throw ConfigError("unknown group '" + name + "' (expected D<k>, e.g. D3)");
}

std::vector<ExperienceSpec> build_schedule(const ExperimentConfig& config, const GroupPtr& group) {
  switch (config.train.schedule) {
    case ScheduleKind::flipflop: return make_flipflop_experiences(group);
    case ScheduleKind::compositional: return make_compositional_experiences(group);
    case ScheduleKind::full: return {make_full_experience(make_compositional_experiences(group))};
    case ScheduleKind::incremental: {
      const auto comp = make_compositional_experiences(group);
      return make_incremental_experiences(comp, make_full_experience(comp));
    }
  }
  throw ConfigError("unknown schedule");
}

ModelConfig build_model_config(const ExperimentConfig& config, int vocab_size, int num_classes) {
  ModelConfig m;
  m.layers = config.model.layers;
  m.heads = config.model.heads;
  const bool full_size = config.scale == Scale::paper && m.layers == 12 && m.heads == 12;
  m.hidden = config.model.hidden > 0 ? config.model.hidden : (full_size ? 768 : desk_hidden_for_heads(m.heads));
  m.ffn = config.model.ffn > 0 ? config.model.ffn : 4 * m.hidden;
  m.max_positions = std::max(token_length(config.data.test_length), token_length(config.data.train_length));
  m.vocab_size = vocab_size;
  m.num_classes = num_classes;
  m.weight_sharing = config.model.family == "shared";
  m.dropout = config.model.dropout;
  m.validate();
  return m;
}

std::uint64_t dataset_seed(std::uint64_t base, const std::string& experience, bool test) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : experience) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return derive_seed(base, h, test ? 1 : 0);
}

std::vector<ExperienceData> load_or_generate(const ExperimentConfig& config,
                                             const std::vector<ExperienceSpec>& schedule) {
  std::vector<ExperienceData> out;
  for (const auto& exp : schedule) {
    if (!config.data.dir.empty()) {
      const fs::path dir(config.data.dir);
      ExperienceData d{read_dataset(dir / (exp.name + "_train.tsv")), read_dataset(dir / (exp.name + "_test.tsv"))};
      for (const Dataset* ds : {&d.train, &d.test}) {
        if (!(ds->experience == exp)) {
          throw DataError("dataset file for '" + exp.name + "' describes experience '" + ds->experience.name + "'");
        }
      }
      out.push_back(std::move(d));
    } else {
      out.push_back({generate_dataset(exp, config.data.train_size, config.data.train_length,
                                      dataset_seed(config.data.seed, exp.name, false), config.data.num_symbols),
                     generate_dataset(exp, config.data.test_size, config.data.test_length,
                                      dataset_seed(config.data.seed, exp.name, true), config.data.num_symbols)});
    }
  }
  return out;
}

int worker_count() {
  const char* env = std::getenv("LEGO_WORKERS");
  if (!env || !*env) return 1;
  try {
    const int n = std::stoi(env);
    if (n >= 1) return n;
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string("LEGO_WORKERS must be a positive integer, got '") + env + "'");
}

void parallel_for(int n, int workers, const std::function<void(int)>& job) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

// ---- generate --------------------------------------------------------------

std::vector<GeneratedFile> cmd_generate(const ExperimentConfig& config) {
  config.validate();
  const auto group = make_group(config.group);
  const auto schedule = build_schedule(config, group);
  const fs::path dir = fs::path(config.out) / "data";
  fs::create_directories(dir);
  std::vector<GeneratedFile> files;
  nlohmann::json manifest = {{"scale", to_string(config.scale)}, {"files", nlohmann::json::array()}};
  for (const auto& exp : schedule) {
    for (bool test : {false, true}) {
      const auto seed = dataset_seed(config.data.seed, exp.name, test);
      const int count = test ? config.data.test_size : config.data.train_size;
      const int length = test ? config.data.test_length : config.data.train_length;
      const auto data = generate_dataset(exp, count, length, seed, config.data.num_symbols);
      std::ostringstream text;
      write_dataset(data, text);
      const fs::path path = dir / (exp.name + (test ? "_test.tsv" : "_train.tsv"));
      write_text(path, text.str());
      GeneratedFile f{exp.name, test ? "test" : "train", path, seed, count, sha256_hex(text.str())};
      manifest["files"].push_back({{"experience", f.experience},
                                   {"split", f.split},
                                   {"path", path.filename().string()},
                                   {"seed", f.seed},
                                   {"count", f.count},
                                   {"clauses", length},
                                   {"sha256", f.digest}});
      files.push_back(std::move(f));
    }
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return files;
}

// ---- train -----------------------------------------------------------------

fs::path run_subdirectory(const ExperimentConfig& config, double replay, std::uint64_t seed) {
  fs::path dir(config.out);
  if (config.replay.size() > 1) dir /= "replay_" + fmt(replay);
  return dir / ("seed" + std::to_string(seed));
}

std::optional<CLMetrics> metrics_if_available(const RunRecord& record) {
  if (record.completed_epochs() != record.total_epochs() || record.total_epochs() < kMetricWindow) return std::nullopt;
  if (record.experiences() >= 2 && record.epochs_per_experience() < kMetricWindow) return std::nullopt;
  return compute_metrics(record);
}

void write_run_directory(const fs::path& dir, const ExperimentConfig& config, const RunRecord& record,
                         double replay_fraction) {
  fs::create_directories(dir / "checkpoints");
  ExperimentConfig snapshot = config;
  snapshot.replay = {replay_fraction};
  snapshot.train.replay_fraction = replay_fraction;
  snapshot.train.seeds = {record.seed};
  nlohmann::json cfg = record.config;
  cfg["experiment"] = snapshot;
  cfg["scale_note"] = config.scale == Scale::desk
                          ? "desk preset: reduced data, epochs and batch size; not paper scale"
                          : "paper-scale preset";
  write_text(dir / "config.json", cfg.dump(2) + "\n");

  std::ostringstream csv;
  write_metrics_csv(record, csv);
  write_text(dir / "metrics.csv", csv.str());

  CheckpointManifest manifest = record.manifest;
  for (std::size_t n = 0; n < manifest.size(); ++n) {
    auto& e = manifest[n];
    if (e.path.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoints/exp%d_epoch%04d.ckpt", e.experience, e.global_epoch);
      e.path = name;
    }
    if (!fs::exists(dir / e.path)) {
      if (n >= record.snapshots.size()) throw TrainingError("no snapshot bytes for checkpoint " + e.path);
      write_file_bytes(dir / e.path, record.snapshots[n]);
    }
  }
  write_manifest(manifest, dir / "checkpoints" / "manifest.csv");

  nlohmann::json summary = {{"scale", to_string(config.scale)},
                            {"scale_note", cfg["scale_note"]},
                            {"seed", record.seed},
                            {"replay_fraction", replay_fraction},
                            {"schedule", to_string(config.train.schedule)},
                            {"experiences", record.experience_names()},
                            {"epochs_per_experience", record.epochs_per_experience()},
                            {"model", record.config.at("model")},
                            {"config", snapshot}};
  if (const auto m = metrics_if_available(record)) {
    summary["metrics"] = to_json_value(*m);
  } else {
    summary["metrics"] = nullptr;
    summary["metrics_note"] = "phases shorter than the " + std::to_string(kMetricWindow) + "-epoch metric window";
  }
  nlohmann::json cps = nlohmann::json::array();
  for (const auto& e : manifest) {
    cps.push_back({{"global_epoch", e.global_epoch}, {"experience", e.experience}, {"path", e.path}, {"sha256", e.digest}});
  }
  summary["checkpoints"] = cps;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

std::vector<RunResult> cmd_train(const ExperimentConfig& config, const Log& log) {
  config.validate();
  const auto group = make_group(config.group);
  const auto schedule = build_schedule(config, group);
  const auto data = load_or_generate(config, schedule);
  std::vector<DatasetPtr> train, test;
  for (const auto& d : data) {
    train.push_back(borrow(d.train));
    test.push_back(borrow(d.test));
  }
  const auto model_config = build_model_config(config, data[0].train.vocab.size(), group->order());
  fs::create_directories(config.out);
  write_text(fs::path(config.out) / "config.json", nlohmann::json(config).dump(2) + "\n");

  std::mutex log_mutex;
  auto say = [&](const std::string& line) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    log(line);
  };

  const auto& seeds = config.train.seeds;
  std::vector<std::vector<RunResult>> per_seed(seeds.size());
  parallel_for(static_cast<int>(seeds.size()), worker_count(), [&](int s) {
    const std::uint64_t seed = seeds[static_cast<std::size_t>(s)];
    TrainConfig tc = config.train;
    tc.seeds = {seed};
    tc.replay_fraction = config.replay.front();
    SequentialTrainer base(Model(model_config, seed), train, test, tc, seed);
    base.on_epoch = [&](const EpochReport& r) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "seed %llu epoch %d (experience %d) lr %.3g train_loss %.4f a4[%d] %.3f %.1fs",
                    static_cast<unsigned long long>(seed), r.global_epoch, r.experience, r.lr, r.train_loss,
                    r.experience, r.record->C(4, r.experience, r.global_epoch), r.seconds);
      say(buf);
    };
    base.run_phase();
    for (double replay : config.replay) {
      SequentialTrainer t = base.branch();
      t.on_epoch = base.on_epoch;
      t.set_replay_fraction(replay);
      while (!t.finished()) t.run_phase();
      const auto dir = run_subdirectory(config, replay, seed);
      write_run_directory(dir, config, t.record(), replay);
      per_seed[static_cast<std::size_t>(s)].push_back({dir, seed, replay, t.record(), metrics_if_available(t.record())});
      say("wrote " + dir.string());
    }
  });

  std::vector<RunResult> results;
  for (auto& v : per_seed) {
    for (auto& r : v) results.push_back(std::move(r));
  }
  std::ostringstream csv;
  csv << "family,layers,heads,hidden,schedule,replay,seed,scale," << metrics_header() << '\n';
  for (const auto& r : results) {
    csv << config.model.family << ',' << model_config.layers << ',' << model_config.heads << ','
        << model_config.hidden << ',' << to_string(config.train.schedule) << ',' << fmt(r.replay_fraction) << ','
        << r.seed << ',' << to_string(config.scale) << ',' << metrics_cells(r.metrics) << '\n';
  }
  write_text(fs::path(config.out) / "summary.csv", csv.str());
  return results;
}

// ---- sweep -----------------------------------------------------------------

namespace {

CLMetrics metrics_from_json(const nlohmann::json& j) {
  CLMetrics m;
  m.TA = j.at("TA").get<double>();
  m.GA = j.at("GA").get<double>();
  m.alpha = j.at("alpha").get<double>();
  if (j.contains("FT")) {
    m.has_transfer = true;
    m.FT.value = j.at("FT").get<double>();
    m.FT.flag = j.at("FT_flag").get<bool>();
    m.FT.tau_first.in_phase = j.at("tau_1").get<int>();
    m.FT.tau_second.in_phase = j.at("tau_2").get<int>();
    m.PM.corrected = j.at("PM_corrected").get<double>();
    m.PM.corrected_flag = j.at("PM_corrected_flag").get<bool>();
    m.PM.literal = j.at("PM_literal").get<double>();
    m.PM.literal_flag = j.at("PM_literal_flag").get<bool>();
  }
  return m;
}

// A cell counts as complete when its summary matches the requested config
// and every listed checkpoint still has its recorded digest.
bool completed_cell(const fs::path& dir, const nlohmann::json& cell_config, std::optional<CLMetrics>& metrics) {
  const auto path = dir / "summary.json";
  if (!fs::exists(path)) return false;
  try {
    const auto summary = nlohmann::json::parse(read_text(path));
    if (summary.at("config") != cell_config) return false;
    for (const auto& cp : summary.at("checkpoints")) {
      const auto file = dir / cp.at("path").get<std::string>();
      if (!fs::exists(file) || sha256_hex(read_file_bytes(file)) != cp.at("sha256").get<std::string>()) return false;
    }
    const auto& m = summary.at("metrics");
    metrics = m.is_null() ? std::nullopt : std::optional<CLMetrics>(metrics_from_json(m));
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, const Log& log) {
  config.validate();
  const auto group = make_group(config.group);
  const auto schedule = build_schedule(config, group);
  const auto data = load_or_generate(config, schedule);
  std::vector<DatasetPtr> train, test;
  for (const auto& d : data) {
    train.push_back(borrow(d.train));
    test.push_back(borrow(d.test));
  }
  const double replay = config.replay.front();

  struct Cell {
    std::string family;
    int layers, heads;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& f : config.sweep.families) {
    for (int L : config.sweep.layers) {
      for (int H : config.sweep.heads) {
        for (auto s : config.train.seeds) cells.push_back({f, L, H, s});
      }
    }
  }
  std::vector<SweepRow> rows(cells.size());
  std::mutex log_mutex;
  parallel_for(static_cast<int>(cells.size()), worker_count(), [&](int n) {
    const Cell& c = cells[static_cast<std::size_t>(n)];
    ExperimentConfig cell = config;
    cell.model.family = c.family;
    cell.model.layers = c.layers;
    cell.model.heads = c.heads;
    cell.out = (fs::path(config.out) / (c.family + "_L" + std::to_string(c.layers) + "_H" + std::to_string(c.heads)))
                   .string();
    cell.replay = {replay};
    auto& row = rows[static_cast<std::size_t>(n)];
    row.family = c.family;
    row.layers = c.layers;
    row.heads = c.heads;
    row.seed = c.seed;
    const auto dir = run_subdirectory(cell, replay, c.seed);
    try {
      const auto mc = build_model_config(cell, data[0].train.vocab.size(), group->order());
      row.hidden = mc.hidden;
      ExperimentConfig snapshot = cell;
      snapshot.replay = {replay};
      snapshot.train.replay_fraction = replay;
      snapshot.train.seeds = {c.seed};
      if (completed_cell(dir, nlohmann::json(snapshot), row.metrics)) {
        row.status = "resumed";
      } else {
        TrainConfig tc = cell.train;
        tc.seeds = {c.seed};
        tc.replay_fraction = replay;
        SequentialTrainer t(Model(mc, c.seed), train, test, tc, c.seed);
        t.set_run_directory(dir);
        t.run();
        write_run_directory(dir, cell, t.record(), replay);
        row.metrics = metrics_if_available(t.record());
        row.status = "trained";
      }
    } catch (const Error& e) {
      row.status = std::string("error: ") + e.what();
    }
    if (log) {
      std::lock_guard lock(log_mutex);
      log(c.family + " L=" + std::to_string(c.layers) + " H=" + std::to_string(c.heads) + " seed " +
          std::to_string(c.seed) + ": " + row.status);
    }
  });

  std::ostringstream csv;
  csv << "family,layers,heads,hidden,seed," << metrics_header() << ",status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    const bool ok = status.rfind("error", 0) != 0;
    csv << r.family << ',' << r.layers << ',' << r.heads << ',' << r.hidden << ',' << r.seed << ','
        << (ok ? metrics_cells(r.metrics) : std::string(",,,,,,,")) << ',' << status << '\n';
  }
  fs::create_directories(config.out);
  write_text(fs::path(config.out) / "sweep_metrics.csv", csv.str());
  return rows;
}

// ---- analyze ---------------------------------------------------------------

std::vector<RunAnalysis> cmd_analyze(const std::vector<fs::path>& runs, int probe_size) {
  if (runs.empty()) throw AnalysisError("no run directories given");
  if (probe_size < 1) throw AnalysisError("probe size must be positive");
  std::vector<RunAnalysis> out;
  for (const auto& dir : runs) {
    if (!fs::exists(dir / "config.json")) throw AnalysisError(dir.string() + " is not a run directory (no config.json)");
    const auto cfg_json = nlohmann::json::parse(read_text(dir / "config.json"));
    if (!cfg_json.contains("experiment")) throw AnalysisError(dir.string() + "/config.json has no experiment block");
    const auto config = resolve_config(cfg_json.at("experiment"));
    const auto manifest_path = dir / "checkpoints" / "manifest.csv";
    if (!fs::exists(manifest_path)) throw AnalysisError(dir.string() + ": missing checkpoints/manifest.csv");
    const auto manifest = read_manifest(manifest_path);
    std::vector<std::string> missing;
    for (const auto& e : manifest) {
      if (!fs::exists(dir / e.path)) missing.push_back(e.path);
    }
    const int experiences = static_cast<int>(cfg_json.at("experiences").size());
    for (int i = 1; i <= experiences; ++i) {
      const bool present = std::any_of(manifest.begin(), manifest.end(), [&](const auto& e) { return e.experience == i; });
      if (!present) missing.push_back("boundary checkpoint for experience " + std::to_string(i));
    }
    if (!missing.empty()) {
      std::string msg = dir.string() + ": missing checkpoints:";
      for (const auto& m : missing) msg += " " + m;
      throw AnalysisError(msg);
    }

    const auto group = make_group(config.group);
    const auto schedule = build_schedule(config, group);
    const auto probe_exp = schedule.front();
    ExperimentConfig probe_cfg = config;
    probe_cfg.data.test_size = std::min(probe_size, config.data.test_size);
    const auto data = load_or_generate(probe_cfg, {probe_exp});
    std::vector<const TokenizedExample*> probes;
    for (std::size_t i = 0; i < data[0].test.size() && static_cast<int>(probes.size()) < probe_size; ++i) {
      probes.push_back(&data[0].test.examples[i].tokens);
    }
    const auto maps = clause_maps(probes);

    RunAnalysis a;
    a.dir = dir;
    std::vector<std::pair<int, std::vector<AttentionRecord>>> captured;
    for (const auto& e : manifest) {
      Model model = load_checkpoint(dir / e.path, e.digest).model;
      auto recs = capture_attention(model, probes);
      a.preceding.emplace_back(e.global_epoch, preceding_clause_attention(recs, maps));
      a.first_clause.emplace_back(e.global_epoch, first_clause_attention(recs, maps));
      captured.emplace_back(e.global_epoch, std::move(recs));
    }
    for (std::size_t n = 1; n < captured.size(); ++n) {
      a.cosine.push_back({captured[n - 1].first, captured[n].first,
                          attention_cosine_similarity(captured[n - 1].second, captured[n].second)});
    }
    std::istringstream metrics_in(read_text(dir / "metrics.csv"));
    const auto record = read_metrics_csv(metrics_in, cfg_json.at("experiences").get<std::vector<std::string>>(),
                                         config.train.epochs_per_experience);
    a.metrics = metrics_if_available(record);

    const fs::path adir = dir / "analysis";
    std::ostringstream pre, first, cos, met;
    pre << "checkpoint_epoch,layer,score\n";
    for (const auto& [k, v] : a.preceding) {
      for (std::size_t l = 0; l < v.size(); ++l) pre << k << ',' << l + 1 << ',' << fmt(v[l]) << '\n';
    }
    first << "checkpoint_epoch,layer,clause,score\n";
    for (const auto& [k, m] : a.first_clause) {
      for (std::size_t l = 0; l < m.size(); ++l) {
        for (std::size_t c = 0; c < m[l].size(); ++c) first << k << ',' << l + 1 << ',' << c + 1 << ',' << fmt(m[l][c]) << '\n';
      }
    }
    cos << "before_epoch,after_epoch,layer,cosine\n";
    for (const auto& c : a.cosine) {
      for (std::size_t l = 0; l < c.per_layer.size(); ++l) {
        cos << c.before << ',' << c.after << ',' << l + 1 << ',' << fmt(c.per_layer[l]) << '\n';
      }
    }
    met << metrics_header() << '\n' << metrics_cells(a.metrics) << '\n';
    write_text(adir / "attention_preceding.csv", pre.str());
    write_text(adir / "attention_first_clause.csv", first.str());
    write_text(adir / "attention_cosine.csv", cos.str());
    write_text(adir / "cl_metrics.csv", met.str());
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace lego
