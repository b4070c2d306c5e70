#pragma once

// Posterior-weighted agreement acquisition and the sequential selection loop.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selectllm/core.hpp"

namespace selectllm {

/// Counts similarity-tensor entries read while scoring candidate queries.
struct ScoringStats {
  std::uint64_t entries_scored = 0;
};

/// p^T S_q p, the posterior-weighted expected agreement of query q.
double selection_score(QueryId q, const Posterior& p, const SimilarityTensor& S,
                       ScoringStats* stats = nullptr);

/// Pool query with minimal selection score; ties go to the smallest id.
QueryId select_next(std::span<const QueryId> pool, const Posterior& p, const SimilarityTensor& S,
                    ScoringStats* stats = nullptr);
QueryId select_next(const SessionState& state, const SimilarityTensor& S, ScoringStats* stats = nullptr);

/// Model with the highest mean oracle score over the annotated items
/// (ties: smallest id). Throws std::logic_error on an empty set.
ModelId empirical_best(const AnnotatedSet& annotated);

/// Supplies an oracle row for a requested query; nullopt signals failure.
class AnnotationSource {
 public:
  virtual ~AnnotationSource() = default;
  virtual std::optional<std::vector<double>> annotate(QueryId q) = 0;
};

/// Answers from a precomputed oracle matrix.
class MatrixOracle final : public AnnotationSource {
 public:
  explicit MatrixOracle(const OracleScoreMatrix& matrix) : matrix_(&matrix) {}
  std::optional<std::vector<double>> annotate(QueryId q) override;

 private:
  const OracleScoreMatrix* matrix_;
};

/// Step-wise form of the selection loop. run_select_llm and the interactive
/// service both drive this class, so their trajectories coincide.
class SelectLlmLoop {
 public:
  SelectLlmLoop(const SimilarityTensor& S, double tau, std::size_t budget, Posterior prior);

  bool finished() const noexcept { return state_.step >= state_.budget || state_.pool.empty(); }
  /// Next query per the acquisition rule. Requires !finished().
  QueryId propose() const;
  /// Records the oracle row for `q` (must be in the pool) and updates the posterior.
  const TrajectoryRecord& observe(QueryId q, std::vector<double> oracle_row);

  const SessionState& state() const noexcept { return state_; }
  const Trajectory& trajectory() const noexcept { return trajectory_; }
  const ScoringStats& stats() const noexcept { return stats_; }
  /// Per-step scored-entry counts, one per propose() call that led to an observe().
  const std::vector<std::uint64_t>& step_costs() const noexcept { return step_costs_; }

 private:
  const SimilarityTensor* tensor_;
  SessionState state_;
  ScoreSums sums_;
  Trajectory trajectory_;
  mutable ScoringStats stats_;
  mutable std::uint64_t pending_cost_ = 0;
  std::vector<std::uint64_t> step_costs_;
};

enum class RunStatus { completed, oracle_failure };

struct RunResult {
  Trajectory trajectory;
  RunStatus status = RunStatus::completed;
  std::string message;
  ModelId final_map_best;
  std::vector<std::uint64_t> step_costs;
};

RunResult run_select_llm(const SimilarityTensor& S, AnnotationSource& oracle, double tau,
                         std::size_t budget, const Posterior& prior);

}  // namespace selectllm
