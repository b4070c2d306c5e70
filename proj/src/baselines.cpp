#include "selectllm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "selectllm/random.hpp"
#include "selectllm/selector.hpp"

namespace selectllm::baselines {

namespace {

std::vector<QueryId> sorted_by_key(const std::vector<double>& key) {
  std::vector<QueryId> order(key.size());
  for (std::size_t i = 0; i < key.size(); ++i) order[i] = QueryId{i};
  std::stable_sort(order.begin(), order.end(),
                   [&](QueryId a, QueryId b) { return key[a.index] < key[b.index]; });
  return order;
}

bool in_pool(std::span<const QueryId> pool, QueryId q) {
  return std::binary_search(pool.begin(), pool.end(), q);
}

// Welford accumulators of proxy risks, one per model.
struct RiskMoments {
  std::vector<double> mean, m2;
  std::size_t count = 0;

  explicit RiskMoments(std::size_t m) : mean(m, 0.0), m2(m, 0.0) {}

  void add(std::span<const double> support_row) {
    ++count;
    for (std::size_t j = 0; j < mean.size(); ++j) {
      const double r = 1.0 - support_row[j];
      const double delta = r - mean[j];
      mean[j] += delta / static_cast<double>(count);
      m2[j] += delta * (r - mean[j]);
    }
  }

  double variance_with(std::span<const double> support_row) const {
    const double k1 = static_cast<double>(count + 1);
    double total = 0.0;
    for (std::size_t j = 0; j < mean.size(); ++j) {
      const double r = 1.0 - support_row[j];
      const double delta = r - mean[j];
      const double new_mean = mean[j] + delta / k1;
      total += (m2[j] + delta * (r - new_mean)) / k1;
    }
    return total;
  }
};

QueryId vma_pick(std::span<const QueryId> pool, const RiskMoments& moments, const SupportScores& support) {
  if (pool.empty()) throw std::logic_error("vma: pool is empty");
  QueryId best = pool.front();
  double best_value = moments.variance_with(support.row(best.index));
  for (std::size_t i = 1; i < pool.size(); ++i) {
    const double v = moments.variance_with(support.row(pool[i].index));
    if (v < best_value || (v == best_value && pool[i] < best)) {
      best = pool[i];
      best_value = v;
    }
  }
  return best;
}

QueryId amc_pick(std::span<const QueryId> pool, const SupportScores& support, ModelId top1, ModelId top2) {
  if (pool.empty()) throw std::logic_error("amc: pool is empty");
  QueryId best = pool.front();
  double best_gap = -1.0;
  for (QueryId q : pool) {
    const double gap = std::abs(support.at(q.index, top1.index) - support.at(q.index, top2.index));
    if (gap > best_gap || (gap == best_gap && q < best)) {
      best = q;
      best_gap = gap;
    }
  }
  return best;
}

ScoreSums support_sums(const SupportScores& support) {
  ScoreSums sums(support.models());
  for (std::size_t i = 0; i < support.queries(); ++i) sums.add(support.row(i));
  return sums;
}

class StaticOrderStrategy final : public Strategy {
 public:
  StaticOrderStrategy(StrategyKind kind, std::vector<QueryId> order) : kind_(kind), order_(std::move(order)) {}
  StrategyKind kind() const noexcept override { return kind_; }
  QueryId next(std::span<const QueryId> pool) override {
    while (cursor_ < order_.size() && !in_pool(pool, order_[cursor_])) ++cursor_;
    if (cursor_ == order_.size()) throw std::logic_error("strategy: pool exhausted");
    return order_[cursor_];
  }
  void observe(QueryId, std::span<const double>) override {}

 private:
  StrategyKind kind_;
  std::vector<QueryId> order_;
  std::size_t cursor_ = 0;
};

class VmaStrategy final : public Strategy {
 public:
  explicit VmaStrategy(const SupportScores& support) : support_(&support), moments_(support.models()) {}
  StrategyKind kind() const noexcept override { return StrategyKind::vma; }
  QueryId next(std::span<const QueryId> pool) override { return vma_pick(pool, moments_, *support_); }
  void observe(QueryId q, std::span<const double>) override { moments_.add(support_->row(q.index)); }

 private:
  const SupportScores* support_;
  RiskMoments moments_;
};

class AmcStrategy final : public Strategy {
 public:
  explicit AmcStrategy(const SupportScores& support)
      : support_(&support), cold_(support_sums(support)), annotated_(support.models()) {
    if (support.models() < 2) throw std::invalid_argument("amc: needs at least 2 models");
  }
  StrategyKind kind() const noexcept override { return StrategyKind::amc; }
  QueryId next(std::span<const QueryId> pool) override {
    const auto [a, b] = annotated_.count() == 0 ? cold_.top_two() : annotated_.top_two();
    return amc_pick(pool, *support_, a, b);
  }
  void observe(QueryId, std::span<const double> row) override { annotated_.add(row); }

 private:
  const SupportScores* support_;
  ScoreSums cold_;
  ScoreSums annotated_;
};

class SelectLlmStrategy final : public Strategy {
 public:
  SelectLlmStrategy(const SimilarityTensor& S, double tau)
      : tensor_(&S), posterior_(uniform_prior(S.models())), tau_(tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("select-llm: tau must be positive");
  }
  StrategyKind kind() const noexcept override { return StrategyKind::select_llm; }
  QueryId next(std::span<const QueryId> pool) override { return select_next(pool, posterior_, *tensor_); }
  void observe(QueryId, std::span<const double> row) override {
    posterior_ = posterior_update(posterior_, row, tau_);
  }

 private:
  const SimilarityTensor* tensor_;
  Posterior posterior_;
  double tau_;
};

}  // namespace

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::random: return "random";
    case StrategyKind::margin: return "margin";
    case StrategyKind::min_agreement: return "min-agreement";
    case StrategyKind::vma: return "vma";
    case StrategyKind::amc: return "amc";
    case StrategyKind::select_llm: return "select-llm";
  }
  return "unknown";
}

const std::vector<StrategyKind>& all_strategies() {
  static const std::vector<StrategyKind> kinds{StrategyKind::select_llm, StrategyKind::random,
                                               StrategyKind::margin,     StrategyKind::min_agreement,
                                               StrategyKind::vma,        StrategyKind::amc};
  return kinds;
}

std::optional<StrategyKind> parse_strategy(std::string_view name) {
  for (auto kind : all_strategies())
    if (to_string(kind) == name) return kind;
  return std::nullopt;
}

SupportScores::SupportScores(std::size_t n, std::size_t m, std::vector<double> values)
    : n_(n), m_(m), values_(std::move(values)) {
  if (values_.size() != n_ * m_) throw std::invalid_argument("support scores: shape mismatch");
}

SupportScores support_scores(const SimilarityTensor& S) {
  const std::size_t n = S.queries(), m = S.models();
  std::vector<double> values(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < m; ++k) sum += S.at(i, j, k);
      values[i * m + j] = sum / static_cast<double>(m);
    }
  }
  return SupportScores(n, m, std::move(values));
}

std::vector<QueryId> random_order(std::size_t n, std::uint64_t seed) {
  std::vector<QueryId> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = QueryId{i};
  Rng rng{seed};
  shuffle(order, rng);
  return order;
}

std::vector<QueryId> margin_order(const SupportScores& support) {
  if (support.models() < 2) throw std::invalid_argument("margin: needs at least 2 models");
  std::vector<double> gap(support.queries());
  for (std::size_t i = 0; i < support.queries(); ++i) {
    auto row = support.row(i);
    double first = row[0], second = row[1];
    if (second > first) std::swap(first, second);
    for (std::size_t j = 2; j < row.size(); ++j) {
      if (row[j] > first) {
        second = first;
        first = row[j];
      } else if (row[j] > second) {
        second = row[j];
      }
    }
    gap[i] = first - second;
  }
  return sorted_by_key(gap);
}

std::vector<QueryId> min_agreement_order(const SupportScores& support) {
  std::vector<double> top(support.queries());
  for (std::size_t i = 0; i < support.queries(); ++i) {
    auto row = support.row(i);
    top[i] = row.empty() ? 0.0 : *std::max_element(row.begin(), row.end());
  }
  return sorted_by_key(top);
}

QueryId vma_next(std::span<const QueryId> pool, std::span<const QueryId> acquired, const SupportScores& support) {
  RiskMoments moments(support.models());
  for (QueryId q : acquired) moments.add(support.row(q.index));
  return vma_pick(pool, moments, support);
}

QueryId amc_next(std::span<const QueryId> pool, const SupportScores& support, const AnnotatedSet& annotated) {
  if (support.models() < 2) throw std::invalid_argument("amc: needs at least 2 models");
  ScoreSums sums(support.models());
  if (annotated.empty()) {
    sums = support_sums(support);
  } else {
    for (const auto& item : annotated.items()) sums.add(item.oracle_row);
  }
  const auto [a, b] = sums.top_two();
  return amc_pick(pool, support, a, b);
}

std::unique_ptr<Strategy> make_strategy(StrategyKind kind, const SimilarityTensor& S,
                                        const SupportScores& support, double tau, std::uint64_t seed) {
  switch (kind) {
    case StrategyKind::random:
      return std::make_unique<StaticOrderStrategy>(kind, random_order(S.queries(), seed));
    case StrategyKind::margin:
      return std::make_unique<StaticOrderStrategy>(kind, margin_order(support));
    case StrategyKind::min_agreement:
      return std::make_unique<StaticOrderStrategy>(kind, min_agreement_order(support));
    case StrategyKind::vma:
      return std::make_unique<VmaStrategy>(support);
    case StrategyKind::amc:
      return std::make_unique<AmcStrategy>(support);
    case StrategyKind::select_llm:
      return std::make_unique<SelectLlmStrategy>(S, tau);
  }
  throw std::invalid_argument("unknown strategy");
}

}  // namespace selectllm::baselines
