#include "lego/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "lego/errors.hpp"

namespace lego {

namespace {

void require_phase(const RunRecord& record, int i) {
  if (i < 1 || i > record.experiences()) {
    throw AnalysisError("phase " + std::to_string(i) + " outside 1.." + std::to_string(record.experiences()));
  }
  if (record.completed_epochs() < record.phase_end(i)) {
    throw AnalysisError("phase " + std::to_string(i) + " has not finished (" +
                        std::to_string(record.completed_epochs()) + " of " + std::to_string(record.phase_end(i)) +
                        " epochs recorded)");
  }
}

void require_position(const RunRecord& record, int j) {
  if (j < 1 || j > record.positions()) {
    throw AnalysisError("position a_" + std::to_string(j) + " is not evaluated (test sequences have " +
                        std::to_string(record.positions()) + " clauses)");
  }
}

}  // namespace

Tau tau(const RunRecord& record, int j, int i, double alpha) {
  require_phase(record, i);
  require_position(record, j);
  for (int k = record.phase_start(i); k <= record.phase_end(i); ++k) {
    if (record.C(j, i, k) > alpha) return {k, k - record.phase_start(i) + 1, true};
  }
  const int P = record.epochs_per_experience();
  return {record.phase_end(i) + 1, P + 1, false};
}

double window_mean(const RunRecord& record, int j, int i, int first_epoch, int window) {
  require_position(record, j);
  if (window < 1) throw AnalysisError("window must be positive");
  if (first_epoch < 1 || first_epoch + window - 1 > record.completed_epochs()) {
    throw AnalysisError("window " + std::to_string(first_epoch) + ".." + std::to_string(first_epoch + window - 1) +
                        " is not covered by the " + std::to_string(record.completed_epochs()) + " recorded epochs");
  }
  double total = 0.0;
  for (int k = first_epoch; k < first_epoch + window; ++k) total += record.C(j, i, k);
  return total / window;
}

namespace {

double final_window(const RunRecord& record, int j, int experience) {
  const int i = experience == 0 ? record.experiences() : experience;
  if (i < 1 || i > record.experiences()) throw AnalysisError("experience " + std::to_string(i) + " not recorded");
  if (record.completed_epochs() != record.total_epochs()) {
    throw AnalysisError("run is incomplete (" + std::to_string(record.completed_epochs()) + " of " +
                        std::to_string(record.total_epochs()) + " epochs)");
  }
  if (record.total_epochs() < kMetricWindow) {
    throw AnalysisError("insufficient data: need at least " + std::to_string(kMetricWindow) + " epochs, have " +
                        std::to_string(record.total_epochs()));
  }
  return window_mean(record, j, i, record.total_epochs() - kMetricWindow + 1);
}

}  // namespace

double task_accuracy(const RunRecord& record, int experience) { return final_window(record, 4, experience); }

double generalization_accuracy(const RunRecord& record, int experience) {
  return final_window(record, 5, experience);
}

ForwardTransfer forward_transfer(const RunRecord& record, double alpha) {
  if (record.experiences() < 2) throw AnalysisError("forward transfer needs at least two phases");
  ForwardTransfer ft;
  ft.tau_first = tau(record, 4, 1, alpha);
  ft.tau_second = tau(record, 4, 2, alpha);
  ft.value = static_cast<double>(ft.tau_first.in_phase) / static_cast<double>(ft.tau_second.in_phase);
  ft.flag = !ft.tau_first.reached || !ft.tau_second.reached;
  return ft;
}

PerformanceMaintenance performance_maintenance(const RunRecord& record) {
  if (record.experiences() < 2) throw AnalysisError("performance maintenance needs at least two phases");
  require_phase(record, 2);
  const int P = record.epochs_per_experience();
  if (P < kMetricWindow) {
    throw AnalysisError("insufficient data: phases of " + std::to_string(P) + " epochs are shorter than the " +
                        std::to_string(kMetricWindow) + "-epoch window");
  }
  PerformanceMaintenance pm;
  const double before = window_mean(record, 4, 1, P - kMetricWindow + 1);
  const double after = window_mean(record, 4, 1, 2 * P - kMetricWindow + 1);
  if (before + after == 0.0) {
    pm.corrected = -1.0;
    pm.corrected_flag = true;
  } else {
    pm.corrected = (after - before) / (after + before);
  }
  // Printed form: sums over the first ten epochs of phases 1 and 2 with a
  // leading factor of 1/10.
  const double s_before = kMetricWindow * window_mean(record, 4, 1, 1);
  const double s_after = kMetricWindow * window_mean(record, 4, 1, P + 1);
  if (s_before + s_after == 0.0) {
    pm.literal = -1.0 / kMetricWindow;
    pm.literal_flag = true;
  } else {
    pm.literal = (s_after - s_before) / (s_after + s_before) / kMetricWindow;
  }
  return pm;
}

CLMetrics compute_metrics(const RunRecord& record, double alpha) {
  CLMetrics m;
  m.alpha = alpha;
  m.TA = task_accuracy(record);
  m.GA = generalization_accuracy(record);
  if (record.experiences() >= 2) {
    m.has_transfer = true;
    m.FT = forward_transfer(record, alpha);
    m.PM = performance_maintenance(record);
  }
  return m;
}

nlohmann::json to_json_value(const CLMetrics& m) {
  nlohmann::json j{{"TA", m.TA}, {"GA", m.GA}, {"alpha", m.alpha}};
  if (m.has_transfer) {
    j["FT"] = m.FT.value;
    j["FT_log10"] = std::log10(m.FT.value);
    j["FT_flag"] = m.FT.flag;
    j["tau_1"] = m.FT.tau_first.in_phase;
    j["tau_2"] = m.FT.tau_second.in_phase;
    j["PM_corrected"] = m.PM.corrected;
    j["PM_corrected_flag"] = m.PM.corrected_flag;
    j["PM_literal"] = m.PM.literal;
    j["PM_literal_flag"] = m.PM.literal_flag;
  }
  return j;
}

// ---- attention analytics ---------------------------------------------------

namespace {

void check_inputs(std::span<const AttentionRecord> records, std::span<const ClauseMap> clauses) {
  if (records.empty()) throw AnalysisError("no attention records");
  if (records.size() != clauses.size()) {
    throw AnalysisError(std::to_string(records.size()) + " attention records but " + std::to_string(clauses.size()) +
                        " clause maps");
  }
  for (std::size_t e = 0; e < records.size(); ++e) {
    const auto& r = records[e];
    if (r.layers != records[0].layers) throw AnalysisError("attention records differ in layer count");
    if (static_cast<int>(clauses[e].size()) < r.length) {
      throw AnalysisError("clause map shorter than the attention record");
    }
    if (r.weights.size() != static_cast<std::size_t>(r.layers * r.heads * r.length * r.length)) {
      throw AnalysisError("attention record has an inconsistent size");
    }
  }
}

// Head-averaged attention of layer l: out[q*n + k].
std::vector<double> head_mean(const AttentionRecord& r, int layer) {
  const auto n = static_cast<std::size_t>(r.length);
  std::vector<double> out(n * n, 0.0);
  for (int h = 0; h < r.heads; ++h) {
    const double* w = r.weights.data() + static_cast<std::size_t>(layer * r.heads + h) * n * n;
    for (std::size_t x = 0; x < n * n; ++x) out[x] += w[x];
  }
  for (auto& v : out) v /= r.heads;
  return out;
}

int clause_count(const ClauseMap& map, int length) {
  int c = -1;
  for (int t = 0; t < length; ++t) c = std::max(c, map[static_cast<std::size_t>(t)]);
  return c + 1;
}

// mass[c][c'] = mean over query tokens of clause c of the attention they put on clause c'.
std::vector<std::vector<double>> clause_mass(const std::vector<double>& a, const ClauseMap& map, int n, int T) {
  std::vector<std::vector<double>> mass(static_cast<std::size_t>(T), std::vector<double>(static_cast<std::size_t>(T), 0.0));
  std::vector<int> rows(static_cast<std::size_t>(T), 0);
  for (int q = 0; q < n; ++q) {
    const int cq = map[static_cast<std::size_t>(q)];
    if (cq < 0) continue;
    ++rows[static_cast<std::size_t>(cq)];
    for (int k = 0; k < n; ++k) {
      const int ck = map[static_cast<std::size_t>(k)];
      if (ck < 0) continue;
      mass[static_cast<std::size_t>(cq)][static_cast<std::size_t>(ck)] += a[static_cast<std::size_t>(q * n + k)];
    }
  }
  for (int c = 0; c < T; ++c) {
    if (rows[static_cast<std::size_t>(c)] == 0) throw AnalysisError("clause " + std::to_string(c + 1) + " has no tokens");
    for (auto& v : mass[static_cast<std::size_t>(c)]) v /= rows[static_cast<std::size_t>(c)];
  }
  return mass;
}

}  // namespace

std::vector<double> preceding_clause_attention(std::span<const AttentionRecord> records,
                                               std::span<const ClauseMap> clauses) {
  check_inputs(records, clauses);
  const int L = records[0].layers;
  std::vector<double> out(static_cast<std::size_t>(L), 0.0);
  for (std::size_t e = 0; e < records.size(); ++e) {
    const auto& r = records[e];
    const int T = clause_count(clauses[e], r.length);
    if (T < 2) throw AnalysisError("preceding-clause attention is undefined for sequences of fewer than 2 clauses");
    for (int l = 0; l < L; ++l) {
      const auto mass = clause_mass(head_mean(r, l), clauses[e], r.length, T);
      double s = 0.0;
      for (int c = 1; c < T; ++c) s += mass[static_cast<std::size_t>(c)][static_cast<std::size_t>(c - 1)];
      out[static_cast<std::size_t>(l)] += s / (T - 1);
    }
  }
  for (auto& v : out) v /= static_cast<double>(records.size());
  return out;
}

std::vector<std::vector<double>> first_clause_attention(std::span<const AttentionRecord> records,
                                                        std::span<const ClauseMap> clauses) {
  check_inputs(records, clauses);
  const int L = records[0].layers;
  const int T = clause_count(clauses[0], records[0].length);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(L), std::vector<double>(static_cast<std::size_t>(T), 0.0));
  for (std::size_t e = 0; e < records.size(); ++e) {
    const auto& r = records[e];
    if (clause_count(clauses[e], r.length) != T) throw AnalysisError("probe examples differ in clause count");
    for (int l = 0; l < L; ++l) {
      const auto mass = clause_mass(head_mean(r, l), clauses[e], r.length, T);
      for (int c = 0; c < T; ++c) out[static_cast<std::size_t>(l)][static_cast<std::size_t>(c)] += mass[static_cast<std::size_t>(c)][0];
    }
  }
  for (auto& row : out) {
    for (auto& v : row) v /= static_cast<double>(records.size());
  }
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw AnalysisError("cosine similarity of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw AnalysisError("cosine similarity of a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::vector<double>> mean_attention_patterns(std::span<const AttentionRecord> records) {
  if (records.empty()) throw AnalysisError("no attention records");
  const int L = records[0].layers;
  const int n = records[0].length;
  std::vector<std::vector<double>> out(static_cast<std::size_t>(L),
                                       std::vector<double>(static_cast<std::size_t>(n * n), 0.0));
  for (const auto& r : records) {
    if (r.layers != L || r.length != n) throw AnalysisError("probe attention records differ in shape");
    for (int l = 0; l < L; ++l) {
      const auto a = head_mean(r, l);
      auto& dst = out[static_cast<std::size_t>(l)];
      for (std::size_t x = 0; x < a.size(); ++x) dst[x] += a[x];
    }
  }
  for (auto& row : out) {
    for (auto& v : row) v /= static_cast<double>(records.size());
  }
  return out;
}

std::vector<double> attention_cosine_similarity(std::span<const AttentionRecord> before,
                                                std::span<const AttentionRecord> after) {
  const auto pa = mean_attention_patterns(before);
  const auto pb = mean_attention_patterns(after);
  if (pa.size() != pb.size() || pa[0].size() != pb[0].size()) {
    throw AnalysisError("attention patterns are not comparable (different layer count or length)");
  }
  std::vector<double> out;
  for (std::size_t l = 0; l < pa.size(); ++l) out.push_back(cosine_similarity(pa[l], pb[l]));
  return out;
}

std::vector<double> attention_cosine_similarity(const TransformerModel<float>& before,
                                                const TransformerModel<float>& after,
                                                std::span<const TokenizedExample* const> probes) {
  if (!(before.config() == after.config())) {
    throw AnalysisError("checkpoints are not comparable: model configs differ");
  }
  const auto a = capture_attention(before, probes);
  const auto b = capture_attention(after, probes);
  return attention_cosine_similarity(a, b);
}

std::vector<AttentionRecord> capture_attention(const TransformerModel<float>& model,
                                               std::span<const TokenizedExample* const> probes) {
  if (probes.empty()) throw AnalysisError("empty probe set");
  ag::NoGradGuard guard;
  std::vector<AttentionRecord> out;
  out.reserve(probes.size());
  constexpr std::size_t chunk = 250;
  for (std::size_t s = 0; s < probes.size(); s += chunk) {
    auto r = model.forward(probes.subspan(s, std::min(chunk, probes.size() - s)), true);
    for (auto& rec : r.attention) out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ClauseMap> clause_maps(std::span<const TokenizedExample* const> probes) {
  std::vector<ClauseMap> out;
  out.reserve(probes.size());
  for (const auto* p : probes) out.push_back(p->clause_map());
  return out;
}

}  // namespace lego
