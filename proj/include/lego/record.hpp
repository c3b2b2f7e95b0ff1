#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lego/checkpoint.hpp"

namespace lego {

// Per-epoch results of one sequential run. Indices are 1-based:
// position j = 1..positions, experience i = 1..experiences,
// global epoch k = 1..experiences*epochs_per_experience.
class RunRecord {
 public:
  RunRecord() = default;
  RunRecord(std::vector<std::string> experience_names, int epochs_per_experience, int positions);

  int experiences() const noexcept { return static_cast<int>(names_.size()); }
  int epochs_per_experience() const noexcept { return epochs_per_experience_; }
  int positions() const noexcept { return positions_; }
  int total_epochs() const noexcept { return experiences() * epochs_per_experience_; }
  // Number of epochs recorded so far.
  int completed_epochs() const noexcept { return completed_; }
  const std::vector<std::string>& experience_names() const noexcept { return names_; }

  // Phase (1-based) that global epoch k belongs to.
  int phase_of(int k) const;
  int phase_start(int i) const { return (i - 1) * epochs_per_experience_ + 1; }
  int phase_end(int i) const { return i * epochs_per_experience_; }

  double C(int j, int i, int k) const;
  void set_C(int j, int i, int k, double accuracy);
  double eval_loss(int i, int k) const;
  void set_eval_loss(int i, int k, double loss);

  double train_loss(int k) const { return train_loss_.at(static_cast<std::size_t>(k - 1)); }
  double lr(int k) const { return lr_.at(static_cast<std::size_t>(k - 1)); }
  void set_epoch_stats(int k, double train_loss, double lr);
  void mark_completed(int k);

  std::uint64_t seed = 0;
  nlohmann::json config;  // snapshot of everything needed to reproduce the run
  CheckpointManifest manifest;
  // Serialized boundary snapshots, parallel to `manifest` (kept in memory so
  // analysis works without a run directory).
  std::vector<std::string> snapshots;

  // Equality of all numeric curves.
  bool same_curves(const RunRecord& other) const;

 private:
  std::size_t index(int j, int i, int k) const;

  std::vector<std::string> names_;
  int epochs_per_experience_ = 0;
  int positions_ = 0;
  int completed_ = 0;
  std::vector<double> accuracy_;  // [k][i][j]
  std::vector<double> eval_loss_;  // [k][i]
  std::vector<double> train_loss_;
  std::vector<double> lr_;
};

}  // namespace lego
