#pragma once

#include <cmath>
#include <vector>

#include "selectllm/core.hpp"
#include "selectllm/random.hpp"

namespace fixtures {

using namespace selectllm;

/// Symmetric tensor with unit diagonal and off-diagonals drawn from [lo, hi).
inline SimilarityTensor random_tensor(std::size_t n, std::size_t m, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::vector<double> e(n * m * m, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = j + 1; k < m; ++k) {
        const double v = uniform_real(rng, lo, hi);
        e[(i * m + j) * m + k] = v;
        e[(i * m + k) * m + j] = v;
      }
  return SimilarityTensor(n, m, std::move(e));
}

inline OracleScoreMatrix random_oracle(std::size_t n, std::size_t m, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::vector<double> e(n * m);
  for (double& v : e) v = uniform_real(rng, lo, hi);
  return OracleScoreMatrix(n, m, std::move(e));
}

inline Posterior random_posterior(std::size_t m, Rng& rng) {
  std::vector<double> p(m);
  double total = 0.0;
  for (double& v : p) {
    v = uniform_real(rng, 0.01, 1.0);
    total += v;
  }
  for (double& v : p) v /= total;
  return Posterior(std::move(p));
}

/// One tensor block per query, each m x m, given row-major.
inline SimilarityTensor tensor_from(std::size_t m, const std::vector<std::vector<double>>& blocks) {
  std::vector<double> e;
  for (const auto& b : blocks) e.insert(e.end(), b.begin(), b.end());
  return SimilarityTensor(blocks.size(), m, std::move(e));
}

/// Two-model tensor with the given off-diagonal per query.
inline SimilarityTensor pair_tensor(const std::vector<double>& offdiag) {
  std::vector<std::vector<double>> blocks;
  for (double v : offdiag) blocks.push_back({1.0, v, v, 1.0});
  return tensor_from(2, blocks);
}

/// Oracle where model 0 strictly dominates model j by margin j * step on every query.
inline OracleScoreMatrix dominant_oracle(std::size_t n, std::size_t m, Rng& rng, double step = 0.1) {
  std::vector<double> e(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const double top = uniform_real(rng, 0.6, 1.0);
    for (std::size_t j = 0; j < m; ++j) e[i * m + j] = top - step * static_cast<double>(j) * 0.5;
  }
  return OracleScoreMatrix(n, m, std::move(e));
}

}  // namespace fixtures
