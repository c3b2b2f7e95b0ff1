#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lego/model.hpp"
#include "lego/record.hpp"

namespace lego {

inline constexpr double kDefaultAlpha = 0.9;
inline constexpr int kMetricWindow = 10;

// First epoch of phase i at which C_j^i exceeds alpha. `global_epoch` is in
// run coordinates, `in_phase` counts from 1 at the phase start. When the
// threshold is never crossed, reached = false and both fields hold the
// sentinel (in_phase = phase length + 1).
struct Tau {
  int global_epoch = 0;
  int in_phase = 0;
  bool reached = false;
};

Tau tau(const RunRecord& record, int j, int i, double alpha = kDefaultAlpha);

// Mean of C_j^i over the last `window` epochs of the run; i = 0 means the
// final experience.
double window_mean(const RunRecord& record, int j, int i, int first_epoch, int window = kMetricWindow);
double task_accuracy(const RunRecord& record, int experience = 0);
double generalization_accuracy(const RunRecord& record, int experience = 0);

struct ForwardTransfer {
  double value = 0.0;
  Tau tau_first;
  Tau tau_second;
  bool flag = false;  // a tau was not reached
};

ForwardTransfer forward_transfer(const RunRecord& record, double alpha = kDefaultAlpha);

struct PerformanceMaintenance {
  double corrected = 0.0;
  double literal = 0.0;
  bool corrected_flag = false;  // zero denominator
  bool literal_flag = false;
};

PerformanceMaintenance performance_maintenance(const RunRecord& record);

struct CLMetrics {
  double TA = 0.0;
  double GA = 0.0;
  ForwardTransfer FT;
  PerformanceMaintenance PM;
  double alpha = kDefaultAlpha;
  bool has_transfer = false;  // FT and PM need two phases
};

CLMetrics compute_metrics(const RunRecord& record, double alpha = kDefaultAlpha);
nlohmann::json to_json_value(const CLMetrics& m);

// ---- attention analytics ---------------------------------------------------

// clause_of_token[t] is the canonical clause (0-based) of token t, or -1 for
// separators and padding; it must cover the record length.
using ClauseMap = std::vector<int>;

// Per layer: mean over examples and clauses c >= 2 of the attention mass that
// query tokens of clause c put on key tokens of clause c-1 (heads averaged
// first, query rows of a clause averaged).
std::vector<double> preceding_clause_attention(std::span<const AttentionRecord> records,
                                               std::span<const ClauseMap> clauses);

// [layer][clause]: mean attention mass from clause-c query tokens onto
// clause-1 key tokens.
std::vector<std::vector<double>> first_clause_attention(std::span<const AttentionRecord> records,
                                                        std::span<const ClauseMap> clauses);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Per layer: attention averaged over heads and probe examples, flattened.
// Every probe example must have the same length.
std::vector<std::vector<double>> mean_attention_patterns(std::span<const AttentionRecord> records);

// Per-layer cosine similarity of the two patterns.
std::vector<double> attention_cosine_similarity(std::span<const AttentionRecord> before,
                                                std::span<const AttentionRecord> after);
std::vector<double> attention_cosine_similarity(const TransformerModel<float>& before,
                                                const TransformerModel<float>& after,
                                                std::span<const TokenizedExample* const> probes);

// Attention records (and clause maps) of `model` on `probes`.
std::vector<AttentionRecord> capture_attention(const TransformerModel<float>& model,
                                               std::span<const TokenizedExample* const> probes);
std::vector<ClauseMap> clause_maps(std::span<const TokenizedExample* const> probes);

}  // namespace lego
