#pragma once

// Annotation-free temperature selection: the harness protocol is replayed
// with the response-agreement proxy standing in for oracle scores.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "selectllm/core.hpp"
#include "selectllm/harness.hpp"

namespace selectllm::tuner {

/// Strictly ascending, strictly positive, non-empty list of temperatures.
class TauGrid {
 public:
  explicit TauGrid(std::vector<double> values);
  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  /// {0.1, 0.2, ..., 0.9, 1, 2, 3, 4, 5}
  static TauGrid search_default();
  /// {0.1, 0.5, 1.0, 3.0, 5.0}
  static TauGrid sensitivity_default();
  /// Comma-separated decimals, e.g. "0.5,1,2".
  static TauGrid parse(std::string_view text);

 private:
  std::vector<double> values_;
};

/// proxy[i][j] = (1/m) sum_k S[i][j][k], as an oracle matrix.
OracleScoreMatrix proxy_oracle(const SimilarityTensor& S);

struct TauCurve {
  double tau;
  std::vector<double> identification;  // per budget 1..b
  std::size_t hits = 0;                // sum over budgets and realizations of identifications
  double mean_identification = 0.0;
  std::optional<std::size_t> labels_to_full;
};

struct TuneResult {
  double tau;
  std::vector<TauCurve> curves;  // grid order
  bool degenerate = false;       // proxy identical across models on every query
};

struct TuneConfig {
  std::size_t realizations = 200;
  std::size_t realization_size = 0;  // 0 means the whole pool
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Picks the tau with the highest mean identification probability over
/// budgets; ties go to the earliest budget reaching 100%, then to the smaller tau.
/// Never sees oracle scores.
TuneResult tune_tau(const SimilarityTensor& S, const TauGrid& grid, const TuneConfig& config);

/// Runs the real harness for Select-LLM at each grid temperature.
std::vector<TauCurve> sensitivity_sweep(const SimilarityTensor& S, const OracleScoreMatrix& oracle,
                                        const TauGrid& grid, const harness::RealizationPlan& plan,
                                        unsigned threads = 1);

}  // namespace selectllm::tuner
