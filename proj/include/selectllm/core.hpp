#pragma once

// Domain types and posterior arithmetic shared by every module.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace selectllm {

struct QueryId {
  std::size_t index = 0;
  auto operator<=>(const QueryId&) const = default;
};

struct ModelId {
  std::size_t index = 0;
  auto operator<=>(const ModelId&) const = default;
};

/// Per-query m x m matrices of response-pair similarities, row-major.
/// Construction checks shape and finiteness only; range, diagonal and
/// symmetry are ingestion rules (see validate_ingested / symmetrized).
class SimilarityTensor {
 public:
  SimilarityTensor() = default;
  SimilarityTensor(std::size_t n, std::size_t m, std::vector<double> entries);

  std::size_t queries() const noexcept { return n_; }
  std::size_t models() const noexcept { return m_; }

  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return entries_[(i * m_ + j) * m_ + k];
  }
  /// The m*m block of query i.
  std::span<const double> query(std::size_t i) const {
    return {entries_.data() + i * m_ * m_, m_ * m_};
  }
  std::span<const double> entries() const noexcept { return entries_; }

  double min_entry() const;
  double max_entry() const;

  /// Sub-tensor over the given queries, in the given order.
  SimilarityTensor restrict_to(std::span<const QueryId> rows) const;

  /// (S + S^T) / 2 per query.
  SimilarityTensor symmetrized() const;

  /// Throws std::invalid_argument naming the first violation of the
  /// post-ingestion invariants: entries in [-1, 1], symmetric per query,
  /// unit diagonal within `diagonal_tolerance`.
  void validate_ingested(double diagonal_tolerance = 1e-6) const;

  bool operator==(const SimilarityTensor&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<double> entries_;
};

/// n x m matrix of reference-vs-model scores; row i column j is s(r_i, f_j(q_i)).
class OracleScoreMatrix {
 public:
  OracleScoreMatrix() = default;
  /// Entries must be finite and lie in [-1, 1].
  OracleScoreMatrix(std::size_t n, std::size_t m, std::vector<double> entries);

  std::size_t queries() const noexcept { return n_; }
  std::size_t models() const noexcept { return m_; }
  double at(std::size_t i, std::size_t j) const { return entries_[i * m_ + j]; }
  std::span<const double> row(std::size_t i) const { return {entries_.data() + i * m_, m_}; }
  std::span<const double> entries() const noexcept { return entries_; }

  OracleScoreMatrix restrict_to(std::span<const QueryId> rows) const;

  bool operator==(const OracleScoreMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<double> entries_;
};

/// Probability vector over candidate models.
class Posterior {
 public:
  /// Validates entries in [0, 1], no NaN, |sum - 1| <= 1e-9.
  explicit Posterior(std::vector<double> probs);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t j) const { return probs_[j]; }
  std::span<const double> probs() const noexcept { return probs_; }

  bool operator==(const Posterior&) const = default;

 private:
  std::vector<double> probs_;
};

__extension__ using Int128 = __int128;

/// Order-independent exact running sums of per-model scores.
///
/// Scores are accumulated in 2^-56 fixed point with 128-bit integers, so the
/// argmax of the means does not depend on summation order. This keeps the
/// harness's empirical-mean pick at t = n identical to the realization's true
/// best. Scores must satisfy |x| < 128.
class ScoreSums {
 public:
  explicit ScoreSums(std::size_t models = 0);

  void add(std::span<const double> row);
  std::size_t count() const noexcept { return count_; }
  std::size_t models() const noexcept { return sums_.size(); }
  double mean(std::size_t j) const;
  /// argmax of the sums; ties go to the smallest index.
  ModelId argmax() const;
  /// Two best models (best first); ties go to the smaller index. Needs m >= 2.
  std::pair<ModelId, ModelId> top_two() const;

 private:
  std::vector<Int128> sums_;
  std::size_t count_ = 0;
};

struct AnnotatedItem {
  QueryId query;
  std::vector<double> oracle_row;
};

/// Ordered oracle annotations A_t; query ids are distinct.
class AnnotatedSet {
 public:
  explicit AnnotatedSet(std::size_t models = 0) : models_(models) {}

  void add(QueryId query, std::vector<double> oracle_row);
  bool contains(QueryId query) const;
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }
  std::size_t models() const noexcept { return models_; }
  const std::vector<AnnotatedItem>& items() const noexcept { return items_; }

 private:
  std::size_t models_;
  std::vector<AnnotatedItem> items_;
};

/// Loop state of the sequential selection procedure.
struct SessionState {
  std::vector<QueryId> pool;  // U_t, ascending
  AnnotatedSet annotated;
  Posterior posterior;
  double tau;
  std::size_t budget;
  std::size_t step = 0;

  /// Fresh state: full pool of n queries, empty annotations.
  static SessionState start(std::size_t n, Posterior prior, double tau, std::size_t budget);
  void check_invariants(std::size_t n) const;
};

struct TrajectoryRecord {
  std::size_t step;
  QueryId query;
  std::vector<double> oracle_row;
  Posterior posterior_after;
  ModelId empirical_best;
  ModelId map_best;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
};

Posterior uniform_prior(std::size_t m);

/// P'(j) proportional to P(j) exp(oracle_row[j] / tau), evaluated in log space
/// with the largest exponent shifted to zero.
Posterior posterior_update(const Posterior& p, std::span<const double> oracle_row, double tau);

/// Folds posterior_update over the annotated items.
Posterior batch_posterior(const Posterior& prior, const AnnotatedSet& annotated, double tau);

/// argmax of the posterior; ties go to the smallest index.
ModelId map_best(const Posterior& p);

}  // namespace selectllm
