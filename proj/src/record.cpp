#include "lego/record.hpp"

#include "lego/errors.hpp"

namespace lego {

RunRecord::RunRecord(std::vector<std::string> experience_names, int epochs_per_experience, int positions)
    : names_(std::move(experience_names)), epochs_per_experience_(epochs_per_experience), positions_(positions) {
  if (names_.empty() || epochs_per_experience_ < 1 || positions_ < 1) {
    throw ConfigError("run record needs at least one experience, epoch and position");
  }
  const auto k = static_cast<std::size_t>(total_epochs());
  const auto e = static_cast<std::size_t>(experiences());
  accuracy_.assign(k * e * static_cast<std::size_t>(positions_), 0.0);
  eval_loss_.assign(k * e, 0.0);
  train_loss_.assign(k, 0.0);
  lr_.assign(k, 0.0);
}

int RunRecord::phase_of(int k) const {
  if (k < 1 || k > total_epochs()) {
    throw AnalysisError("epoch " + std::to_string(k) + " outside 1.." + std::to_string(total_epochs()));
  }
  return (k - 1) / epochs_per_experience_ + 1;
}

std::size_t RunRecord::index(int j, int i, int k) const {
  if (j < 1 || j > positions_) throw AnalysisError("position a_" + std::to_string(j) + " not recorded");
  if (i < 1 || i > experiences()) throw AnalysisError("experience " + std::to_string(i) + " not recorded");
  if (k < 1 || k > total_epochs()) {
    throw AnalysisError("epoch " + std::to_string(k) + " outside 1.." + std::to_string(total_epochs()));
  }
  const auto e = static_cast<std::size_t>(experiences());
  const auto p = static_cast<std::size_t>(positions_);
  return (static_cast<std::size_t>(k - 1) * e + static_cast<std::size_t>(i - 1)) * p + static_cast<std::size_t>(j - 1);
}

double RunRecord::C(int j, int i, int k) const { return accuracy_[index(j, i, k)]; }

void RunRecord::set_C(int j, int i, int k, double accuracy) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw TrainingError("accuracy outside [0, 1]");
  accuracy_[index(j, i, k)] = accuracy;
}

double RunRecord::eval_loss(int i, int k) const { return eval_loss_[index(1, i, k) / static_cast<std::size_t>(positions_)]; }

void RunRecord::set_eval_loss(int i, int k, double loss) {
  eval_loss_[index(1, i, k) / static_cast<std::size_t>(positions_)] = loss;
}

void RunRecord::set_epoch_stats(int k, double train_loss, double lr) {
  phase_of(k);
  train_loss_[static_cast<std::size_t>(k - 1)] = train_loss;
  lr_[static_cast<std::size_t>(k - 1)] = lr;
}

void RunRecord::mark_completed(int k) {
  if (k != completed_ + 1) throw TrainingError("epochs must be recorded in order");
  completed_ = k;
}

bool RunRecord::same_curves(const RunRecord& other) const {
  return names_ == other.names_ && epochs_per_experience_ == other.epochs_per_experience_ &&
         positions_ == other.positions_ && completed_ == other.completed_ && accuracy_ == other.accuracy_ &&
         eval_loss_ == other.eval_loss_ && train_loss_ == other.train_loss_ && lr_ == other.lr_;
}

}  // namespace lego
