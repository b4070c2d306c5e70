#pragma once

// Comparison acquisition strategies behind a common interface.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "selectllm/core.hpp"

namespace selectllm::baselines {

enum class StrategyKind { random, margin, min_agreement, vma, amc, select_llm };

/// CLI-stable names: random, margin, min-agreement, vma, amc, select-llm.
std::string_view to_string(StrategyKind kind);
std::optional<StrategyKind> parse_strategy(std::string_view name);
const std::vector<StrategyKind>& all_strategies();

/// values[i][j] = (1/m) sum_k S[i][j][k]; also the annotation-free proxy oracle.
class SupportScores {
 public:
  SupportScores(std::size_t n, std::size_t m, std::vector<double> values);
  std::size_t queries() const noexcept { return n_; }
  std::size_t models() const noexcept { return m_; }
  double at(std::size_t i, std::size_t j) const { return values_[i * m_ + j]; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * m_, m_}; }
  std::span<const double> values() const noexcept { return values_; }

 private:
  std::size_t n_, m_;
  std::vector<double> values_;
};

SupportScores support_scores(const SimilarityTensor& S);

/// Uniform permutation of [0, n) from a Fisher-Yates shuffle on mt19937_64(seed).
std::vector<QueryId> random_order(std::size_t n, std::uint64_t seed);

/// Ascending gap between the two highest supports; ties by id. Needs m >= 2.
std::vector<QueryId> margin_order(const SupportScores& support);

/// Ascending maximum support; ties by id.
std::vector<QueryId> min_agreement_order(const SupportScores& support);

/// Pool query minimizing the summed per-model population variance of proxy
/// risks 1 - support over the acquired queries plus the candidate.
QueryId vma_next(std::span<const QueryId> pool, std::span<const QueryId> acquired,
                 const SupportScores& support);

/// Pool query maximizing |support[q][top1] - support[q][top2]| for the current
/// top-2 models (by mean annotated oracle score; by mean support before any
/// annotation). Needs m >= 2.
QueryId amc_next(std::span<const QueryId> pool, const SupportScores& support,
                 const AnnotatedSet& annotated);

/// One acquisition run. next() is called with the ascending pool; observe()
/// reports the oracle row of the query just acquired.
class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual StrategyKind kind() const noexcept = 0;
  virtual QueryId next(std::span<const QueryId> pool) = 0;
  virtual void observe(QueryId q, std::span<const double> oracle_row) = 0;
};

/// `tau` is used by select-llm only; `seed` by random only. The tensor and
/// support scores must outlive the strategy.
std::unique_ptr<Strategy> make_strategy(StrategyKind kind, const SimilarityTensor& S,
                                        const SupportScores& support, double tau, std::uint64_t seed);

}  // namespace selectllm::baselines
