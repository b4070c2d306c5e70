#pragma once

// Realization-based evaluation protocol and its metrics: identification
// probability, near-best probability, annotation efficiency and the
// percentile performance gap.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selectllm/baselines.hpp"
#include "selectllm/core.hpp"
#include "selectllm/random.hpp"

namespace selectllm::harness {

using baselines::StrategyKind;

struct RealizationPlan {
  std::size_t pool_size = 0;
  std::size_t realization_size = 0;
  std::size_t realizations = 1000;
  std::size_t budget = 0;  // 0 means realization_size
  std::uint64_t seed = 0;

  std::size_t effective_budget() const noexcept { return budget == 0 ? realization_size : budget; }
  void validate() const;
};

/// Uniform n-subset of [0, pool_size), ascending.
std::vector<QueryId> sample_realization(std::size_t pool_size, std::size_t n, Rng& rng);

/// argmax of column means over the given rows; ties go to the smallest id.
ModelId true_best(const OracleScoreMatrix& oracle, std::span<const QueryId> rows);

struct Realization {
  std::vector<QueryId> queries;      // pool ids, ascending
  std::vector<double> column_means;  // per-model mean over all realization queries
  ModelId best;
};

/// Per-step record of one method on one realization. Query ids are local
/// realization positions; selected[t - 1] is the empirical-mean pick after t labels.
struct MethodTrajectory {
  std::vector<QueryId> queries;
  std::vector<ModelId> selected;
};

struct MethodRuns {
  StrategyKind kind;
  std::vector<MethodTrajectory> runs;  // one per realization
};

struct TrialSet {
  std::vector<Realization> realizations;
  std::vector<MethodRuns> methods;
  std::size_t budget = 0;

  const MethodRuns* find(StrategyKind kind) const;
};

/// Runs every method on every realization. Realization r samples its queries
/// from stream (seed, 0, r); the random baseline of realization r uses
/// stream (seed, 1, r). All methods see identical realizations.
TrialSet run_trials(const SimilarityTensor& S, const OracleScoreMatrix& oracle,
                    std::span<const StrategyKind> methods, const RealizationPlan& plan, double tau,
                    unsigned threads = 1);

/// point[t - 1] = fraction of realizations whose pick after t labels equals the true best.
std::vector<double> identification_curve(std::span<const MethodTrajectory> runs,
                                         std::span<const ModelId> true_bests);
std::vector<double> identification_curve(const MethodRuns& runs, std::span<const Realization> realizations);

/// Fraction of realizations whose pick has mean >= (1 - delta) * best mean.
std::vector<double> near_best_curve(std::span<const MethodTrajectory> runs,
                                    std::span<const Realization> realizations, double delta);

/// Smallest budget t (1-based) whose curve value equals 1.0.
std::optional<std::size_t> labels_to_full(std::span<const double> curve);

struct EfficiencyReport {
  std::optional<std::size_t> select_llm_budget;
  std::vector<std::pair<StrategyKind, std::optional<std::size_t>>> baseline_budgets;
  std::optional<StrategyKind> strongest_baseline;
  std::optional<std::size_t> strongest_budget;
  std::optional<double> reduction;  // (b_base - b_sel) / b_base; positive = fewer labels
};

EfficiencyReport efficiency(std::optional<std::size_t> select_llm_budget,
                            std::vector<std::pair<StrategyKind, std::optional<std::size_t>>> baseline_budgets);

struct GapResult {
  double value = 0.0;
  std::size_t included = 0;
  std::size_t excluded = 0;  // realizations with non-positive best mean
};

/// Nearest-rank percentile over realizations of (best - selected) / best at budget t.
GapResult gap_percentile(std::span<const MethodTrajectory> runs, std::span<const Realization> realizations,
                         std::size_t t, double pct = 95.0);

/// Nearest-rank percentile: the ceil(pct/100 * N)-th smallest value.
double nearest_rank_percentile(std::vector<double> values, double pct);

inline const std::vector<double>& default_deltas() {
  static const std::vector<double> d{0.001, 0.005, 0.01};
  return d;
}

inline const std::vector<double>& gap_levels() {
  static const std::vector<double> l{0.70, 0.80, 0.90, 1.00};
  return l;
}

struct CurvePoint {
  std::size_t budget;
  double identification;
  std::vector<double> near_best;  // one per delta
  double gap_p95;
};

struct MethodSummary {
  StrategyKind kind;
  std::vector<CurvePoint> curve;
  std::optional<std::size_t> labels_to_full;
  std::vector<std::optional<std::size_t>> near_best_labels;  // one per delta
  std::size_t gap_excluded = 0;
};

struct GapTableRow {
  double level;
  std::optional<std::size_t> budget;  // first budget where select-llm reaches the level
  std::vector<std::pair<StrategyKind, double>> gaps;
};

struct Summary {
  std::vector<double> deltas;
  std::vector<MethodSummary> methods;
  EfficiencyReport best_efficiency;
  std::vector<EfficiencyReport> near_best_efficiency;  // one per delta
  std::vector<GapTableRow> gap_table;                   // empty without select-llm
};

Summary summarize(const TrialSet& trials, std::span<const double> deltas = default_deltas());

}  // namespace selectllm::harness
