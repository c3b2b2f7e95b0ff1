#include "lego/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "lego/errors.hpp"

namespace lego {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::flipflop: return "flipflop";
    case ScheduleKind::compositional: return "compositional";
    case ScheduleKind::incremental: return "incremental";
    case ScheduleKind::full: return "full";
  }
  return "?";
}

ScheduleKind schedule_from_string(const std::string& text) {
  for (auto k : {ScheduleKind::flipflop, ScheduleKind::compositional, ScheduleKind::incremental, ScheduleKind::full}) {
    if (text == to_string(k)) return k;
  }
  throw ConfigError("unknown schedule '" + text + "' (expected flipflop, compositional, incremental or full)");
}

void TrainConfig::validate() const {
  if (epochs_per_experience < 1) throw ConfigError("epochs_per_experience must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(replay_fraction >= 0.0 && replay_fraction <= 1.0)) {
    throw ConfigError("replay_fraction must lie in [0, 1], got " + std::to_string(replay_fraction));
  }
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  if (eval_subsample < 0) throw ConfigError("eval_subsample must be non-negative");
  if (lr.base_lr <= 0.0 || lr.min_lr < 0.0) throw ConfigError("learning rates must be positive");
  if (lr.warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
}

void TrainConfig::validate(std::size_t train_size) const {
  validate();
  if (static_cast<std::size_t>(batch_size) > train_size) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds the train set size " +
                      std::to_string(train_size));
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs_per_experience", c.epochs_per_experience},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr.base_lr},
                     {"min_lr", c.lr.min_lr},
                     {"t_max", c.lr.t_max},
                     {"lr_mode", to_string(c.lr.mode)},
                     {"warmup_steps", c.lr.warmup_steps},
                     {"replay_fraction", c.replay_fraction},
                     {"seeds", c.seeds},
                     {"eval_every", c.eval_every},
                     {"eval_subsample", c.eval_subsample},
                     {"schedule", to_string(c.schedule)},
                     {"reset_optimizer", c.reset_optimizer}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs_per_experience = j.value("epochs_per_experience", d.epochs_per_experience);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr.base_lr = j.value("lr", d.lr.base_lr);
  c.lr.min_lr = j.value("min_lr", d.lr.min_lr);
  c.lr.t_max = j.value("t_max", d.lr.t_max);
  c.lr.mode = lr_mode_from_string(j.value("lr_mode", to_string(d.lr.mode)));
  c.lr.warmup_steps = j.value("warmup_steps", d.lr.warmup_steps);
  c.replay_fraction = j.value("replay_fraction", d.replay_fraction);
  c.seeds = j.value("seeds", d.seeds);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.eval_subsample = j.value("eval_subsample", d.eval_subsample);
  c.schedule = schedule_from_string(j.value("schedule", to_string(d.schedule)));
  c.reset_optimizer = j.value("reset_optimizer", d.reset_optimizer);
}

std::size_t ReplayBuffer::capacity(double fraction, std::size_t train_size) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("replay fraction must lie in [0, 1]");
  // The epsilon absorbs representation error such as 0.07 * 100 = 7.000000000000001.
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train_size) + 1e-9));
}

void ReplayBuffer::add_experience(int experience, const Dataset& train, double fraction, Rng& rng) {
  if (counts().contains(experience)) {
    throw TrainingError("replay buffer already holds experience " + std::to_string(experience));
  }
  const std::size_t n = train.size();
  const std::size_t keep = std::min(capacity(fraction, n), n);
  if (keep == 0) return;
  // Partial Fisher-Yates: the first `keep` slots are a uniform sample.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + uniform_index(rng, n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  for (auto i : idx) {
    const auto& ex = train.examples[i];
    items_.push_back({experience, ex.id, &ex.tokens});
  }
}

std::map<int, std::size_t> ReplayBuffer::counts() const {
  std::map<int, std::size_t> out;
  for (const auto& item : items_) ++out[item.experience];
  return out;
}

namespace {

std::vector<BatchItem> make_pool(int current_experience, const Dataset& current, const ReplayBuffer& buffer) {
  if (current.size() == 0) throw TrainingError("current experience has an empty train set");
  if (buffer.counts().contains(current_experience)) {
    throw TrainingError("replay buffer contains examples of the current experience");
  }
  std::vector<BatchItem> pool;
  pool.reserve(current.size() + buffer.size());
  for (const auto& ex : current.examples) pool.push_back({current_experience, ex.id, &ex.tokens});
  pool.insert(pool.end(), buffer.items().begin(), buffer.items().end());
  return pool;
}

}  // namespace

std::vector<BatchItem> build_batch(int current_experience, const Dataset& current, const ReplayBuffer& buffer,
                                   int batch_size, Rng& rng) {
  auto pool = make_pool(current_experience, current, buffer);
  if (batch_size < 1 || static_cast<std::size_t>(batch_size) > pool.size()) {
    throw TrainingError("batch size " + std::to_string(batch_size) + " does not fit a pool of " +
                        std::to_string(pool.size()));
  }
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t i = 0; i < b; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
  pool.resize(b);
  return pool;
}

std::vector<std::vector<BatchItem>> epoch_batches(int current_experience, const Dataset& current,
                                                  const ReplayBuffer& buffer, int batch_size, Rng& rng) {
  auto pool = make_pool(current_experience, current, buffer);
  if (batch_size < 1) throw TrainingError("batch size must be positive");
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[uniform_index(rng, i)]);
  const auto b = static_cast<std::size_t>(batch_size);
  std::vector<std::vector<BatchItem>> out;
  for (std::size_t s = 0; s + b <= pool.size(); s += b) out.emplace_back(pool.begin() + s, pool.begin() + s + b);
  return out;
}

EvalResult evaluate(const Model& model, std::span<const TokenizedExample* const> examples) {
  if (examples.empty()) throw TrainingError("evaluate: empty test set");
  const std::size_t positions = examples.front()->canonical.size();
  std::vector<std::int64_t> correct(positions, 0);
  double loss_sum = 0.0;
  std::int64_t labeled = 0;
  for (std::size_t s = 0; s < examples.size(); s += kEvalBatch) {
    const auto chunk = examples.subspan(s, std::min<std::size_t>(kEvalBatch, examples.size() - s));
    const auto logits = model.infer_logits(chunk);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto& ex = *chunk[b];
      if (ex.canonical.size() != positions) throw TrainingError("evaluate: examples differ in clause count");
      const auto row = logits.example(static_cast<int>(b));
      const auto a = predict_assignments(row, logits.classes, ex);
      for (std::size_t p = 0; p < positions; ++p) correct[p] += a.correct[p] ? 1 : 0;
      for (std::size_t t = 0; t < ex.labels.size(); ++t) {
        const int y = ex.labels[t];
        if (y == kNoLabel) continue;
        const float* z = row.data() + t * static_cast<std::size_t>(logits.classes);
        double mx = z[0];
        for (int c = 1; c < logits.classes; ++c) mx = std::max(mx, static_cast<double>(z[c]));
        double total = 0.0;
        for (int c = 0; c < logits.classes; ++c) total += std::exp(static_cast<double>(z[c]) - mx);
        loss_sum += std::log(total) + mx - static_cast<double>(z[y]);
        ++labeled;
      }
    }
  }
  EvalResult r;
  r.accuracy.resize(positions);
  for (std::size_t p = 0; p < positions; ++p) {
    r.accuracy[p] = static_cast<double>(correct[p]) / static_cast<double>(examples.size());
  }
  r.loss = labeled ? loss_sum / static_cast<double>(labeled) : 0.0;
  return r;
}

EvalResult evaluate(const Model& model, const Dataset& test, int subsample) {
  std::size_t n = test.size();
  if (subsample > 0) n = std::min(n, static_cast<std::size_t>(subsample));
  std::vector<const TokenizedExample*> ptrs;
  ptrs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&test.examples[i].tokens);
  return evaluate(model, ptrs);
}

SequentialTrainer::SequentialTrainer(Model model, std::vector<DatasetPtr> train, std::vector<DatasetPtr> test,
                                     TrainConfig config, std::uint64_t seed)
    : model_(std::move(model)),
      train_(std::move(train)),
      test_(std::move(test)),
      config_(std::move(config)),
      seed_(seed) {
  if (train_.empty()) throw TrainingError("schedule has no experiences");
  if (train_.size() != test_.size()) {
    throw TrainingError("schedule error: " + std::to_string(train_.size()) + " train sets but " +
                        std::to_string(test_.size()) + " test sets");
  }
  std::vector<std::string> names;
  for (std::size_t i = 0; i < train_.size(); ++i) {
    const auto& tr = *train_[i];
    const auto& te = *test_[i];
    if (!(tr.experience == te.experience)) {
      throw TrainingError("schedule error: experience " + std::to_string(i + 1) + " pairs train set '" +
                          tr.experience.name + "' with test set '" + te.experience.name + "'");
    }
    if (!(tr.vocab == train_[0]->vocab) || !(te.vocab == train_[0]->vocab)) {
      throw TrainingError("schedule error: datasets use different vocabularies");
    }
    if (te.length != test_[0]->length) throw TrainingError("schedule error: test sets differ in length");
    if (te.size() == 0) throw TrainingError("schedule error: empty test set for " + te.experience.name);
    config_.validate(tr.size());
    names.push_back(tr.experience.name);
  }
  if (train_[0]->vocab.size() != model_.config().vocab_size) {
    throw TrainingError("model vocabulary (" + std::to_string(model_.config().vocab_size) +
                        ") does not match the data (" + std::to_string(train_[0]->vocab.size()) + ")");
  }
  record_ = RunRecord(names, config_.epochs_per_experience, test_[0]->length);
  record_.seed = seed_;
  record_.config = {{"model", model_.config()}, {"train", config_}, {"seed", seed_}, {"experiences", names}};
}

void SequentialTrainer::set_replay_fraction(double fraction) {
  config_.replay_fraction = fraction;
  config_.validate();
  record_.config["train"] = config_;
}

void SequentialTrainer::run_phase() {
  if (finished()) throw TrainingError("all experiences already trained");
  const int i = phases_done_ + 1;
  if (i > 1) {
    Rng rng(derive_seed(seed_, streams::replay, static_cast<std::uint64_t>(i - 1)));
    update_buffer(buffer_, i - 1, *train_[static_cast<std::size_t>(i - 2)], config_.replay_fraction, rng);
    if (config_.reset_optimizer) optimizer_.reset();
  }
  const Dataset& current = *train_[static_cast<std::size_t>(i - 1)];
  auto params = model_.parameter_tensors();
  const int P = config_.epochs_per_experience;
  const bool dropout = model_.config().dropout > 0.0;

  for (int e = 1; e <= P; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const int k = (i - 1) * P + e;
    const double lr = config_.lr.at(k - 1, e - 1);
    Rng batch_rng(derive_seed(seed_, streams::batches, static_cast<std::uint64_t>(k)));
    Rng drop_rng(derive_seed(seed_, streams::dropout, static_cast<std::uint64_t>(k)));
    const auto batches = epoch_batches(i, current, buffer_, config_.batch_size, batch_rng);
    if (trace_) trace_log_.emplace_back();
    double loss_sum = 0.0;
    std::vector<const TokenizedExample*> ptrs;
    for (const auto& batch : batches) {
      ptrs.clear();
      for (const auto& item : batch) {
        ptrs.push_back(item.tokens);
        if (trace_) trace_log_.back().emplace_back(item.experience, item.example_id);
      }
      auto out = model_.forward(ptrs, false, dropout ? &drop_rng : nullptr);
      auto loss = ag::masked_cross_entropy(out.logits, out.inputs.labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(k) + " (experience " + std::to_string(i) + ")");
      }
      ag::backward(loss);
      adam_step(params, optimizer_, lr * config_.lr.warmup_factor(optimizer_.step + 1));
      loss_sum += value;
    }
    record_.set_epoch_stats(k, batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size()), lr);
    if (e % config_.eval_every == 0 || e == P || k == 1) {
      evaluate_all(k);
    } else {
      for (int x = 1; x <= experiences(); ++x) {
        for (int j = 1; j <= record_.positions(); ++j) record_.set_C(j, x, k, record_.C(j, x, k - 1));
        record_.set_eval_loss(x, k, record_.eval_loss(x, k - 1));
      }
    }
    record_.mark_completed(k);
    if (on_epoch) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      on_epoch({k, i, e, lr, record_.train_loss(k), secs, &record_});
    }
  }
  checkpoint(i * P, i);
  ++phases_done_;
}

void SequentialTrainer::evaluate_all(int k) {
  for (int x = 1; x <= experiences(); ++x) {
    const auto r = evaluate(model_, *test_[static_cast<std::size_t>(x - 1)], config_.eval_subsample);
    for (int j = 1; j <= record_.positions(); ++j) record_.set_C(j, x, k, r.accuracy[static_cast<std::size_t>(j - 1)]);
    record_.set_eval_loss(x, k, r.loss);
  }
}

void SequentialTrainer::checkpoint(int k, int experience) {
  const CheckpointInfo info{k, experience};
  auto bytes = serialize_checkpoint(model_, info);
  CheckpointEntry entry{k, experience, {}, sha256_hex(bytes)};
  if (!run_dir_.empty()) {
    char name[64];
    std::snprintf(name, sizeof name, "checkpoints/exp%d_epoch%04d.ckpt", experience, k);
    write_file_bytes(run_dir_ / name, bytes);
    entry.path = name;
    record_.manifest.push_back(entry);
    write_manifest(record_.manifest, run_dir_ / "checkpoints" / "manifest.csv");
  } else {
    record_.manifest.push_back(entry);
  }
  record_.snapshots.push_back(std::move(bytes));
}

const RunRecord& SequentialTrainer::run() {
  while (!finished()) run_phase();
  return record_;
}

SequentialTrainer SequentialTrainer::branch() const {
  SequentialTrainer copy(*this);
  copy.model_ = model_.clone();
  copy.on_epoch = nullptr;
  return copy;
}

RunRecord train_sequential(Model& model, const std::vector<Dataset>& train, const std::vector<Dataset>& test,
                           const TrainConfig& config, std::uint64_t seed) {
  std::vector<DatasetPtr> tr, te;
  for (const auto& d : train) tr.push_back(borrow(d));
  for (const auto& d : test) te.push_back(borrow(d));
  SequentialTrainer trainer(model.clone(), std::move(tr), std::move(te), config, seed);
  trainer.run();
  model = trainer.model().clone();
  return trainer.record();
}

namespace {
// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
}  // namespace

void write_metrics_csv(const RunRecord& record, std::ostream& out) {
  out << "global_epoch,experience_trained,eval_experience,position,accuracy,loss,lr\n";
  for (int k = 1; k <= record.completed_epochs(); ++k) {
    const int trained = record.phase_of(k);
    for (int i = 1; i <= record.experiences(); ++i) {
      for (int j = 1; j <= record.positions(); ++j) {
        out << k << ',' << trained << ',' << i << ',' << j << ',' << fmt(record.C(j, i, k)) << ','
            << fmt(record.eval_loss(i, k)) << ',' << fmt(record.lr(k)) << '\n';
      }
    }
  }
}

RunRecord read_metrics_csv(std::istream& in, const std::vector<std::string>& experience_names,
                           int epochs_per_experience) {
  std::string line;
  if (!std::getline(in, line) || line != "global_epoch,experience_trained,eval_experience,position,accuracy,loss,lr") {
    throw AnalysisError("metrics table: unexpected header '" + line + "'");
  }
  struct Row {
    int k, trained, i, j;
    double acc, loss, lr;
  };
  std::vector<Row> rows;
  int positions = 0, last_k = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Row r{};
    if (std::sscanf(line.c_str(), "%d,%d,%d,%d,%lf,%lf,%lf", &r.k, &r.trained, &r.i, &r.j, &r.acc, &r.loss, &r.lr) != 7) {
      throw AnalysisError("metrics table: malformed row '" + line + "'");
    }
    positions = std::max(positions, r.j);
    last_k = std::max(last_k, r.k);
    rows.push_back(r);
  }
  if (rows.empty()) throw AnalysisError("metrics table has no rows");
  RunRecord rec(experience_names, epochs_per_experience, positions);
  for (const auto& r : rows) {
    rec.set_C(r.j, r.i, r.k, r.acc);
    rec.set_eval_loss(r.i, r.k, r.loss);
    rec.set_epoch_stats(r.k, 0.0, r.lr);
  }
  for (int k = 1; k <= last_k; ++k) rec.mark_completed(k);
  return rec;
}

}  // namespace lego
