#pragma once

// Validation lab over binary-vector response spaces: exact conditional mutual
// information, rank agreement between the pairwise-agreement rule and exact
// MI, and numerical checks of the identities behind the rule.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "selectllm/core.hpp"

namespace selectllm::synthetic {

/// All 2^d bit vectors, enumerated in integer order of their bit pattern.
/// A vector is a mask in [0, 2^d); the zero vector takes part in MI sums but
/// is never sampled as a model output.
class BinaryResponseSpace {
 public:
  explicit BinaryResponseSpace(unsigned d = 8, double tau = 1.0);

  unsigned dimension() const noexcept { return d_; }
  std::size_t size() const noexcept { return size_; }
  double tau() const noexcept { return tau_; }

  /// Cosine similarity; 0 if either vector is zero.
  double cosine(std::uint32_t x, std::uint32_t y) const { return cosine_[x * size_ + y]; }
  /// exp(cosine / tau)
  double kernel(std::uint32_t x, std::uint32_t y) const { return kernel_[x * size_ + y]; }

 private:
  unsigned d_;
  std::size_t size_;
  double tau_;
  std::vector<double> cosine_;
  std::vector<double> kernel_;
};

/// Per-model likelihoods P(R = r | F = f_j, q) over the full space.
struct QueryLikelihoods {
  std::size_t models = 0;
  std::size_t space = 0;
  std::vector<double> likelihood;      // models x space
  std::vector<double> log_likelihood;  // models x space
};

/// Builds the likelihoods of one query. Each model's normalizer sums all
/// 2^d kernel values; `normalizer_terms`, when given, counts those terms.
QueryLikelihoods query_likelihoods(std::span<const std::uint32_t> outputs, const BinaryResponseSpace& space,
                                   std::uint64_t* normalizer_terms = nullptr);

/// I(F; R | A_t, q) = sum_j P_j sum_r P(r | f_j) log(P(r | f_j) / P(r | A_t)).
double mutual_information(const QueryLikelihoods& lik, std::span<const double> posterior);

double exact_mi(std::span<const std::uint32_t> outputs, const Posterior& posterior,
                const BinaryResponseSpace& space);

/// sum_jk P_j P_k cos(f_j(q), f_k(q)).
double rule_score(std::span<const std::uint32_t> outputs, std::span<const double> posterior,
                  const BinaryResponseSpace& space);

/// maxP on model 0, the remaining mass spread uniformly. Requires maxP >= 1/m.
Posterior max_posterior(std::size_t m, double max_p);

/// Average ranks (1 = smallest); values within `tolerance` of a group's first
/// value share that group's average rank.
std::vector<double> average_ranks(std::span<const double> values, double tolerance = 0.0);

/// Spearman correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b, double tolerance = 0.0);

/// Over unordered pairs: concordant 1, tied in both 1, tied in one 0.5, discordant 0.
double pairwise_accuracy(std::span<const double> a, std::span<const double> b, double tolerance = 0.0);

struct ValidationConfig {
  unsigned d = 8;
  std::vector<std::size_t> model_counts{2, 5, 10, 20};
  /// One list per model count; empty means default_max_p(m).
  std::vector<std::vector<double>> max_p;
  std::size_t n_syn = 100;
  double tau = 1.0;
  std::size_t seeds = 2000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double tie_tolerance = 1e-12;
  std::size_t scatter_seeds = 1;
};

/// Default maxP rows for m in {2, 5, 10, 20}; throws for other m.
std::vector<double> default_max_p(std::size_t m);

struct AgreementReport {
  std::size_t m;
  double max_p;
  double top1_recall;
  double top5pct_recall;
  double spearman;
  double pairwise_accuracy;
  std::size_t seeds;
};

struct ScatterPoint {
  std::size_t m;
  double max_p;
  std::size_t seed;
  std::size_t query;
  double rule_rank;
  double mi_rank;
};

struct ValidationResult {
  std::vector<AgreementReport> rows;
  std::vector<ScatterPoint> scatter;
  std::uint64_t normalizer_terms = 0;
  std::uint64_t normalizers = 0;
};

/// Per seed: outputs drawn uniformly from nonzero vectors; queries ranked by
/// the rule (ascending) and by exact MI (descending). A seed's top-1 (top-5%)
/// recall counts as a hit when the rule's minimal-score tie set contains a
/// query attaining the maximal MI (one of the top ceil(5% n_syn) MI values).
ValidationResult run_validation(const ValidationConfig& config);

struct DerivationReport {
  std::size_t instances = 0;
  double taylor_worst_ratio = 0.0;  // max |remainder| / (C |x-1|^3) over x != 1
  double taylor_at_one = 0.0;       // remainder at x = 1
  double variance_max_error = 0.0;
  double kernel_max_error = 0.0;
  bool passed = false;
};

/// Taylor bound for x log x on |x-1| <= 0.2 with C = 1 / (6 * 0.8^2), the weighted
/// variance identity and the unit-embedding distance identity, on random instances.
DerivationReport derivation_checks(std::uint64_t seed, std::size_t instances = 10000);

}  // namespace selectllm::synthetic
