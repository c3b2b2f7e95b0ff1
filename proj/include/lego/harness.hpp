#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lego/checkpoint.hpp"
#include "lego/dataset.hpp"
#include "lego/optim.hpp"
#include "lego/record.hpp"

namespace lego {

enum class ScheduleKind { flipflop, compositional, incremental, full };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_from_string(const std::string& text);

struct TrainConfig {
  int epochs_per_experience = 100;
  int batch_size = 500;
  LrSchedule lr;
  double replay_fraction = 0.0;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4};
  // Evaluate every `eval_every` epochs (and always on a phase's last epoch);
  // skipped epochs repeat the most recent evaluation.
  int eval_every = 1;
  // Evaluate on the first `eval_subsample` test examples; 0 = all.
  int eval_subsample = 0;
  ScheduleKind schedule = ScheduleKind::flipflop;
  // Clear Adam moments at every experience boundary.
  bool reset_optimizer = false;

  void validate() const;                         // ConfigError
  void validate(std::size_t train_size) const;  // also batch_size <= train_size
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// One training example drawn into a batch, tagged with its experience
// (1-based) and dataset id.
struct BatchItem {
  int experience = 0;
  std::int64_t example_id = 0;
  const TokenizedExample* tokens = nullptr;
};

class ReplayBuffer {
 public:
  // floor(fraction * train_size)
  static std::size_t capacity(double fraction, std::size_t train_size);

  // Appends `capacity` examples of the finished experience, sampled uniformly
  // without replacement. Adding the same experience twice is an error.
  void add_experience(int experience, const Dataset& train, double fraction, Rng& rng);

  const std::vector<BatchItem>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }
  std::map<int, std::size_t> counts() const;

 private:
  std::vector<BatchItem> items_;
};

inline void update_buffer(ReplayBuffer& buffer, int experience, const Dataset& train, double fraction, Rng& rng) {
  buffer.add_experience(experience, train, fraction, rng);
}

// `batch_size` items drawn uniformly without replacement from the current
// train set together with the buffer contents.
std::vector<BatchItem> build_batch(int current_experience, const Dataset& current, const ReplayBuffer& buffer,
                                   int batch_size, Rng& rng);

// One epoch: the pool (current + buffer) shuffled and cut into
// floor(|pool| / batch_size) full batches; the remainder is dropped.
std::vector<std::vector<BatchItem>> epoch_batches(int current_experience, const Dataset& current,
                                                  const ReplayBuffer& buffer, int batch_size, Rng& rng);

struct EvalResult {
  std::vector<double> accuracy;  // per canonical position a_1..a_T
  double loss = 0.0;             // mean cross-entropy over labeled positions
};

inline constexpr int kEvalBatch = 250;

EvalResult evaluate(const Model& model, std::span<const TokenizedExample* const> examples);
EvalResult evaluate(const Model& model, const Dataset& test, int subsample = 0);

struct EpochReport {
  int global_epoch = 0;
  int experience = 0;
  int epoch_in_phase = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double seconds = 0.0;
  const RunRecord* record = nullptr;
};

using DatasetPtr = std::shared_ptr<const Dataset>;

// Non-owning handle; the dataset must outlive every trainer using it.
inline DatasetPtr borrow(const Dataset& data) { return DatasetPtr(std::shared_ptr<const Dataset>{}, &data); }

// Trains one model on a schedule of experiences, one phase at a time.
// All randomness is derived from (seed, stream, epoch or boundary), so a
// trainer branched after phase i and continued behaves exactly like a fresh
// run with the same settings.
class SequentialTrainer {
 public:
  SequentialTrainer(Model model, std::vector<DatasetPtr> train, std::vector<DatasetPtr> test, TrainConfig config,
                    std::uint64_t seed);

  int experiences() const noexcept { return static_cast<int>(train_.size()); }
  int phases_completed() const noexcept { return phases_done_; }
  bool finished() const noexcept { return phases_done_ == experiences(); }

  // Trains the next experience.
  void run_phase();
  // Trains every remaining experience and returns the record.
  const RunRecord& run();

  // Independent deep copy (model, optimizer state, buffer, record).
  SequentialTrainer branch() const;

  // Takes effect at the next boundary. The record's config snapshot is updated.
  void set_replay_fraction(double fraction);

  // Boundary checkpoints are also written to <dir>/checkpoints/.
  void set_run_directory(std::filesystem::path dir) { run_dir_ = std::move(dir); }

  std::function<void(const EpochReport&)> on_epoch;

  const Model& model() const noexcept { return model_; }
  Model& model() noexcept { return model_; }
  const RunRecord& record() const noexcept { return record_; }
  RunRecord& record() noexcept { return record_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  const TrainConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  // Every item trained on so far, per global epoch (only when tracing is on).
  void enable_batch_trace(bool on) { trace_ = on; }
  const std::vector<std::vector<std::pair<int, std::int64_t>>>& batch_trace() const noexcept { return trace_log_; }

 private:
  void evaluate_all(int k);
  void checkpoint(int k, int experience);

  Model model_;
  std::vector<DatasetPtr> train_;
  std::vector<DatasetPtr> test_;
  TrainConfig config_;
  std::uint64_t seed_;
  AdamState<float> optimizer_;
  ReplayBuffer buffer_;
  RunRecord record_;
  int phases_done_ = 0;
  std::filesystem::path run_dir_;
  bool trace_ = false;
  std::vector<std::vector<std::pair<int, std::int64_t>>> trace_log_;
};

// Plain sequential training of `model` over the experiences in order.
RunRecord train_sequential(Model& model, const std::vector<Dataset>& train, const std::vector<Dataset>& test,
                           const TrainConfig& config, std::uint64_t seed);

// Per-epoch metrics table:
//   global_epoch,experience_trained,eval_experience,position,accuracy,loss,lr
// Experiences and positions are 1-based; loss is the eval-set loss.
void write_metrics_csv(const RunRecord& record, std::ostream& out);
// Rebuilds the accuracy, loss and lr curves of a record from the table.
RunRecord read_metrics_csv(std::istream& in, const std::vector<std::string>& experience_names,
                           int epochs_per_experience);

}  // namespace lego
