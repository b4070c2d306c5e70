#include "selectllm/tuner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>
#include <string>

#include "selectllm/baselines.hpp"

namespace selectllm::tuner {

TauGrid::TauGrid(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw std::invalid_argument("tau grid: empty");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!(values_[i] > 0.0) || !std::isfinite(values_[i]))
      throw std::invalid_argument("tau grid: values must be positive");
    if (i > 0 && !(values_[i] > values_[i - 1]))
      throw std::invalid_argument("tau grid: values must be strictly ascending without duplicates");
  }
}

TauGrid TauGrid::search_default() {
  return TauGrid({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 2.0, 3.0, 4.0, 5.0});
}

TauGrid TauGrid::sensitivity_default() { return TauGrid({0.1, 0.5, 1.0, 3.0, 5.0}); }

TauGrid TauGrid::parse(std::string_view text) {
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    std::string_view item = text.substr(pos, comma - pos);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size())
      throw std::invalid_argument("tau grid: malformed value '" + std::string(item) + "'");
    values.push_back(v);
    pos = comma + 1;
  }
  return TauGrid(std::move(values));
}

OracleScoreMatrix proxy_oracle(const SimilarityTensor& S) {
  const auto support = baselines::support_scores(S);
  std::vector<double> v(support.values().begin(), support.values().end());
  // Support averages of in-range similarities stay in range up to rounding.
  for (double& x : v) x = std::clamp(x, -1.0, 1.0);
  return OracleScoreMatrix(S.queries(), S.models(), std::move(v));
}

namespace {

TauCurve make_curve(double tau, const harness::TrialSet& trials) {
  TauCurve c;
  c.tau = tau;
  c.identification = harness::identification_curve(trials.methods.front(), trials.realizations);
  const auto& runs = trials.methods.front().runs;
  for (std::size_t t = 0; t < trials.budget; ++t)
    for (std::size_t r = 0; r < runs.size(); ++r)
      c.hits += runs[r].selected[t] == trials.realizations[r].best;
  const double cells = static_cast<double>(trials.budget) * static_cast<double>(runs.size());
  c.mean_identification = cells > 0 ? static_cast<double>(c.hits) / cells : 0.0;
  c.labels_to_full = harness::labels_to_full(c.identification);
  return c;
}

bool better(const TauCurve& a, const TauCurve& b) {
  if (a.hits != b.hits) return a.hits > b.hits;
  if (a.labels_to_full != b.labels_to_full) {
    if (!b.labels_to_full) return true;
    if (!a.labels_to_full) return false;
    return *a.labels_to_full < *b.labels_to_full;
  }
  return a.tau < b.tau;
}

}  // namespace

TuneResult tune_tau(const SimilarityTensor& S, const TauGrid& grid, const TuneConfig& config) {
  const OracleScoreMatrix proxy = proxy_oracle(S);
  TuneResult result{grid.values().front(), {}, false};

  bool degenerate = true;
  for (std::size_t i = 0; i < proxy.queries() && degenerate; ++i)
    for (std::size_t j = 1; j < proxy.models(); ++j)
      if (proxy.at(i, j) != proxy.at(i, 0)) {
        degenerate = false;
        break;
      }
  if (degenerate) {
    result.degenerate = true;
    return result;
  }

  harness::RealizationPlan plan;
  plan.pool_size = S.queries();
  plan.realization_size = config.realization_size == 0 ? S.queries() : config.realization_size;
  plan.realizations = config.realizations;
  plan.seed = config.seed;
  const std::vector<baselines::StrategyKind> methods{baselines::StrategyKind::select_llm};

  std::size_t best = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double tau = grid.values()[g];
    const auto trials = harness::run_trials(S, proxy, methods, plan, tau, config.threads);
    result.curves.push_back(make_curve(tau, trials));
    if (g > 0 && better(result.curves[g], result.curves[best])) best = g;
  }
  result.tau = result.curves[best].tau;
  return result;
}

std::vector<TauCurve> sensitivity_sweep(const SimilarityTensor& S, const OracleScoreMatrix& oracle,
                                        const TauGrid& grid, const harness::RealizationPlan& plan,
                                        unsigned threads) {
  const std::vector<baselines::StrategyKind> methods{baselines::StrategyKind::select_llm};
  std::vector<TauCurve> curves;
  for (double tau : grid.values()) curves.push_back(make_curve(tau, harness::run_trials(S, oracle, methods, plan, tau, threads)));
  return curves;
}

}  // namespace selectllm::tuner
