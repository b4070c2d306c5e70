#include "selectllm/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace selectllm {

namespace {

std::string cell(std::size_t i, std::size_t j, std::size_t k) {
  return "[" + std::to_string(i) + "][" + std::to_string(j) + "][" + std::to_string(k) + "]";
}

}  // namespace

SimilarityTensor::SimilarityTensor(std::size_t n, std::size_t m, std::vector<double> entries)
    : n_(n), m_(m), entries_(std::move(entries)) {
  if (entries_.size() != n_ * m_ * m_) {
    throw std::invalid_argument("similarity tensor: expected " + std::to_string(n_ * m_ * m_) +
                                " entries, got " + std::to_string(entries_.size()));
  }
  for (std::size_t idx = 0; idx < entries_.size(); ++idx) {
    if (!std::isfinite(entries_[idx])) {
      const std::size_t i = idx / (m_ * m_);
      const std::size_t j = (idx / m_) % m_;
      throw std::invalid_argument("similarity tensor: non-finite entry at " + cell(i, j, idx % m_));
    }
  }
}

double SimilarityTensor::min_entry() const {
  return entries_.empty() ? 0.0 : *std::min_element(entries_.begin(), entries_.end());
}

double SimilarityTensor::max_entry() const {
  return entries_.empty() ? 0.0 : *std::max_element(entries_.begin(), entries_.end());
}

SimilarityTensor SimilarityTensor::restrict_to(std::span<const QueryId> rows) const {
  std::vector<double> out;
  out.reserve(rows.size() * m_ * m_);
  for (QueryId q : rows) {
    if (q.index >= n_) throw std::invalid_argument("similarity tensor: query index out of range");
    auto block = query(q.index);
    out.insert(out.end(), block.begin(), block.end());
  }
  return SimilarityTensor(rows.size(), m_, std::move(out));
}

SimilarityTensor SimilarityTensor::symmetrized() const {
  std::vector<double> out(entries_.size());
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < m_; ++j)
      for (std::size_t k = 0; k < m_; ++k)
        out[(i * m_ + j) * m_ + k] = j == k ? at(i, j, k) : 0.5 * (at(i, j, k) + at(i, k, j));
  return SimilarityTensor(n_, m_, std::move(out));
}

void SimilarityTensor::validate_ingested(double diagonal_tolerance) const {
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < m_; ++j) {
      for (std::size_t k = 0; k < m_; ++k) {
        const double v = at(i, j, k);
        if (v < -1.0 || v > 1.0)
          throw std::invalid_argument("similarity entry " + cell(i, j, k) + " outside [-1, 1]");
        if (v != at(i, k, j))
          throw std::invalid_argument("similarity entry " + cell(i, j, k) + " is not symmetric");
      }
      if (std::abs(at(i, j, j) - 1.0) > diagonal_tolerance)
        throw std::invalid_argument("similarity diagonal " + cell(i, j, j) + " is not 1.0");
    }
  }
}

OracleScoreMatrix::OracleScoreMatrix(std::size_t n, std::size_t m, std::vector<double> entries)
    : n_(n), m_(m), entries_(std::move(entries)) {
  if (entries_.size() != n_ * m_) {
    throw std::invalid_argument("oracle matrix: expected " + std::to_string(n_ * m_) +
                                " entries, got " + std::to_string(entries_.size()));
  }
  for (std::size_t idx = 0; idx < entries_.size(); ++idx) {
    const double v = entries_[idx];
    if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
      throw std::invalid_argument("oracle matrix: entry [" + std::to_string(idx / m_) + "][" +
                                  std::to_string(idx % m_) + "] is not a finite value in [-1, 1]");
    }
  }
}

OracleScoreMatrix OracleScoreMatrix::restrict_to(std::span<const QueryId> rows) const {
  std::vector<double> out;
  out.reserve(rows.size() * m_);
  for (QueryId q : rows) {
    if (q.index >= n_) throw std::invalid_argument("oracle matrix: query index out of range");
    auto r = row(q.index);
    out.insert(out.end(), r.begin(), r.end());
  }
  return OracleScoreMatrix(rows.size(), m_, std::move(out));
}

Posterior::Posterior(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw std::invalid_argument("posterior: empty probability vector");
  double sum = 0.0;
  for (double v : probs_) {
    if (std::isnan(v) || v < 0.0 || v > 1.0)
      throw std::invalid_argument("posterior: entry outside [0, 1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("posterior: entries do not sum to 1");
}

namespace {

constexpr double kFixedScale = 0x1.0p56;

}  // namespace

ScoreSums::ScoreSums(std::size_t models) : sums_(models, 0) {}

void ScoreSums::add(std::span<const double> row) {
  if (row.size() != sums_.size()) throw std::invalid_argument("score sums: row length mismatch");
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (!(std::abs(row[j]) < 128.0)) throw std::invalid_argument("score sums: score out of range");
    sums_[j] += static_cast<Int128>(std::llround(row[j] * kFixedScale));
  }
  ++count_;
}

double ScoreSums::mean(std::size_t j) const {
  if (count_ == 0) throw std::logic_error("score sums: mean of empty set");
  return static_cast<double>(static_cast<long double>(sums_[j]) / kFixedScale /
                             static_cast<long double>(count_));
}

ModelId ScoreSums::argmax() const {
  if (sums_.empty()) throw std::logic_error("score sums: no models");
  std::size_t best = 0;
  for (std::size_t j = 1; j < sums_.size(); ++j)
    if (sums_[j] > sums_[best]) best = j;
  return ModelId{best};
}

std::pair<ModelId, ModelId> ScoreSums::top_two() const {
  if (sums_.size() < 2) throw std::invalid_argument("score sums: top_two needs at least 2 models");
  const std::size_t first = argmax().index;
  std::size_t second = first == 0 ? 1 : 0;
  for (std::size_t j = 0; j < sums_.size(); ++j)
    if (j != first && sums_[j] > sums_[second]) second = j;
  return {ModelId{first}, ModelId{second}};
}

void AnnotatedSet::add(QueryId query, std::vector<double> oracle_row) {
  if (oracle_row.size() != models_)
    throw std::invalid_argument("annotated set: oracle row length does not match model count");
  if (contains(query))
    throw std::invalid_argument("annotated set: query " + std::to_string(query.index) +
                                " already annotated");
  items_.push_back({query, std::move(oracle_row)});
}

bool AnnotatedSet::contains(QueryId query) const {
  return std::any_of(items_.begin(), items_.end(),
                     [&](const AnnotatedItem& it) { return it.query == query; });
}

SessionState SessionState::start(std::size_t n, Posterior prior, double tau, std::size_t budget) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be positive");
  if (budget > n) throw std::invalid_argument("budget exceeds the number of queries");
  std::vector<QueryId> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = QueryId{i};
  const std::size_t m = prior.size();
  return SessionState{std::move(pool), AnnotatedSet(m), std::move(prior), tau, budget, 0};
}

void SessionState::check_invariants(std::size_t n) const {
  if (pool.size() + annotated.size() != n) throw std::logic_error("session: |pool| + |A| != n");
  if (step != annotated.size() || step > budget) throw std::logic_error("session: bad step count");
  if (!(tau > 0.0)) throw std::logic_error("session: tau must be positive");
}

Posterior uniform_prior(std::size_t m) {
  if (m == 0) throw std::invalid_argument("uniform_prior: model set is empty");
  return Posterior(std::vector<double>(m, 1.0 / static_cast<double>(m)));
}

Posterior posterior_update(const Posterior& p, std::span<const double> oracle_row, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("posterior_update: tau must be positive");
  if (oracle_row.size() != p.size())
    throw std::invalid_argument("posterior_update: oracle row length does not match posterior");
  for (double o : oracle_row)
    if (!std::isfinite(o)) throw std::invalid_argument("posterior_update: non-finite oracle score");

  const std::size_t m = p.size();
  std::vector<double> logw(m, -std::numeric_limits<double>::infinity());
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) {
    if (p[j] > 0.0) {
      logw[j] = std::log(p[j]) + oracle_row[j] / tau;
      shift = std::max(shift, logw[j]);
    }
  }
  std::vector<double> out(m, 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    if (p[j] > 0.0) {
      out[j] = std::exp(logw[j] - shift);
      total += out[j];
    }
  }
  for (double& v : out) v /= total;
  return Posterior(std::move(out));
}

Posterior batch_posterior(const Posterior& prior, const AnnotatedSet& annotated, double tau) {
  Posterior p = prior;
  for (const auto& item : annotated.items()) p = posterior_update(p, item.oracle_row, tau);
  return p;
}

ModelId map_best(const Posterior& p) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < p.size(); ++j)
    if (p[j] > p[best]) best = j;
  return ModelId{best};
}

}  // namespace selectllm
