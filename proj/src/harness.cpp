#include "selectllm/harness.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "selectllm/parallel.hpp"

namespace selectllm::harness {

void RealizationPlan::validate() const {
  if (realization_size == 0) throw std::invalid_argument("plan: realization size must be positive");
  if (realization_size > pool_size)
    throw std::invalid_argument("plan: realization size " + std::to_string(realization_size) +
                                " exceeds pool size " + std::to_string(pool_size));
  if (effective_budget() > realization_size) throw std::invalid_argument("plan: budget exceeds realization size");
  if (realizations == 0) throw std::invalid_argument("plan: need at least one realization");
}

std::vector<QueryId> sample_realization(std::size_t pool_size, std::size_t n, Rng& rng) {
  if (n > pool_size) throw std::invalid_argument("sample_realization: n exceeds pool size");
  std::vector<QueryId> ids(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) ids[i] = QueryId{i};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, pool_size - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return ids;
}

ModelId true_best(const OracleScoreMatrix& oracle, std::span<const QueryId> rows) {
  if (rows.empty()) throw std::logic_error("true_best: empty realization");
  ScoreSums sums(oracle.models());
  for (QueryId q : rows) sums.add(oracle.row(q.index));
  return sums.argmax();
}

const MethodRuns* TrialSet::find(StrategyKind kind) const {
  for (const auto& m : methods)
    if (m.kind == kind) return &m;
  return nullptr;
}

TrialSet run_trials(const SimilarityTensor& S, const OracleScoreMatrix& oracle,
                    std::span<const StrategyKind> methods, const RealizationPlan& plan, double tau,
                    unsigned threads) {
  plan.validate();
  if (S.queries() != plan.pool_size || oracle.queries() != plan.pool_size)
    throw std::invalid_argument("run_trials: plan pool size does not match the bundle");
  if (S.models() != oracle.models())
    throw std::invalid_argument("run_trials: tensor and oracle disagree on the model count");
  if (std::find(methods.begin(), methods.end(), StrategyKind::select_llm) != methods.end() &&
      !(tau > 0.0 && std::isfinite(tau)))
    throw std::invalid_argument("run_trials: select-llm needs a positive tau");

  const std::size_t budget = plan.effective_budget();
  const std::size_t n = plan.realization_size;
  const std::size_t m = S.models();

  TrialSet out;
  out.budget = budget;
  out.realizations.resize(plan.realizations);
  out.methods.reserve(methods.size());
  for (auto kind : methods) out.methods.push_back({kind, std::vector<MethodTrajectory>(plan.realizations)});

  parallel_for(plan.realizations, threads, [&](std::size_t r) {
    Rng rng = make_rng(plan.seed, {0, r});
    Realization& real = out.realizations[r];
    real.queries = sample_realization(plan.pool_size, n, rng);
    const SimilarityTensor local_s = S.restrict_to(real.queries);
    const OracleScoreMatrix local_o = oracle.restrict_to(real.queries);
    const auto support = baselines::support_scores(local_s);

    ScoreSums all(m);
    for (std::size_t i = 0; i < n; ++i) all.add(local_o.row(i));
    real.best = all.argmax();
    real.column_means.resize(m);
    for (std::size_t j = 0; j < m; ++j) real.column_means[j] = all.mean(j);

    const std::uint64_t random_seed = derive_seed(plan.seed, {1, r});
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      auto strategy = baselines::make_strategy(methods[mi], local_s, support, tau, random_seed);
      MethodTrajectory& traj = out.methods[mi].runs[r];
      traj.queries.reserve(budget);
      traj.selected.reserve(budget);
      std::vector<QueryId> pool(n);
      for (std::size_t i = 0; i < n; ++i) pool[i] = QueryId{i};
      ScoreSums sums(m);
      for (std::size_t t = 0; t < budget; ++t) {
        const QueryId q = strategy->next(pool);
        auto it = std::lower_bound(pool.begin(), pool.end(), q);
        if (it == pool.end() || *it != q) throw std::logic_error("run_trials: strategy chose a query outside the pool");
        pool.erase(it);
        const auto row = local_o.row(q.index);
        strategy->observe(q, row);
        sums.add(row);
        traj.queries.push_back(q);
        traj.selected.push_back(sums.argmax());
      }
    }
  });
  return out;
}

namespace {

std::size_t common_length(std::span<const MethodTrajectory> runs) {
  if (runs.empty()) return 0;
  const std::size_t len = runs.front().selected.size();
  for (const auto& r : runs)
    if (r.selected.size() != len) throw std::invalid_argument("curve: trajectories differ in length");
  return len;
}

}  // namespace

std::vector<double> identification_curve(std::span<const MethodTrajectory> runs,
                                         std::span<const ModelId> true_bests) {
  if (runs.size() != true_bests.size())
    throw std::invalid_argument("identification_curve: trajectories and true bests are misaligned");
  const std::size_t len = common_length(runs);
  std::vector<double> curve(len, 0.0);
  if (runs.empty()) return curve;
  for (std::size_t t = 0; t < len; ++t) {
    std::size_t hits = 0;
    for (std::size_t r = 0; r < runs.size(); ++r) hits += runs[r].selected[t] == true_bests[r];
    curve[t] = static_cast<double>(hits) / static_cast<double>(runs.size());
  }
  return curve;
}

std::vector<double> identification_curve(const MethodRuns& runs, std::span<const Realization> realizations) {
  std::vector<ModelId> bests;
  bests.reserve(realizations.size());
  for (const auto& r : realizations) bests.push_back(r.best);
  return identification_curve(runs.runs, bests);
}

std::vector<double> near_best_curve(std::span<const MethodTrajectory> runs,
                                    std::span<const Realization> realizations, double delta) {
  if (!(delta >= 0.0 && delta < 1.0)) throw std::invalid_argument("near_best_curve: delta must lie in [0, 1)");
  if (runs.size() != realizations.size())
    throw std::invalid_argument("near_best_curve: trajectories and realizations are misaligned");
  const std::size_t len = common_length(runs);
  std::vector<double> curve(len, 0.0);
  if (runs.empty()) return curve;
  for (std::size_t t = 0; t < len; ++t) {
    std::size_t hits = 0;
    for (std::size_t r = 0; r < runs.size(); ++r) {
      const auto& means = realizations[r].column_means;
      hits += means[runs[r].selected[t].index] >= (1.0 - delta) * means[realizations[r].best.index];
    }
    curve[t] = static_cast<double>(hits) / static_cast<double>(runs.size());
  }
  return curve;
}

std::optional<std::size_t> labels_to_full(std::span<const double> curve) {
  for (std::size_t t = 0; t < curve.size(); ++t)
    if (curve[t] == 1.0) return t + 1;
  return std::nullopt;
}

EfficiencyReport efficiency(std::optional<std::size_t> select_llm_budget,
                            std::vector<std::pair<StrategyKind, std::optional<std::size_t>>> baseline_budgets) {
  EfficiencyReport report;
  report.select_llm_budget = select_llm_budget;
  report.baseline_budgets = std::move(baseline_budgets);
  for (const auto& [kind, budget] : report.baseline_budgets) {
    if (budget && (!report.strongest_budget || *budget < *report.strongest_budget)) {
      report.strongest_budget = budget;
      report.strongest_baseline = kind;
    }
  }
  if (report.strongest_budget && select_llm_budget) {
    const double base = static_cast<double>(*report.strongest_budget);
    report.reduction = (base - static_cast<double>(*select_llm_budget)) / base;
  }
  return report;
}

double nearest_rank_percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw std::invalid_argument("percentile: no values");
  if (!(pct > 0.0 && pct <= 100.0)) throw std::invalid_argument("percentile: pct must lie in (0, 100]");
  std::sort(values.begin(), values.end());
  // Products like 0.95 * 100 are not exact in binary; snap to the nearest integer first.
  double rank = pct / 100.0 * static_cast<double>(values.size());
  const double rounded = std::round(rank);
  if (std::abs(rank - rounded) < 1e-9) rank = rounded;
  const auto idx = static_cast<std::size_t>(std::max(1.0, std::ceil(rank)));
  return values[std::min(idx, values.size()) - 1];
}

GapResult gap_percentile(std::span<const MethodTrajectory> runs, std::span<const Realization> realizations,
                         std::size_t t, double pct) {
  if (runs.size() != realizations.size())
    throw std::invalid_argument("gap_percentile: trajectories and realizations are misaligned");
  const std::size_t len = common_length(runs);
  if (t == 0 || t > len) throw std::invalid_argument("gap_percentile: budget outside the trajectory");
  GapResult result;
  std::vector<double> gaps;
  gaps.reserve(runs.size());
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& means = realizations[r].column_means;
    const double best = means[realizations[r].best.index];
    if (!(best > 0.0)) {
      ++result.excluded;
      continue;
    }
    gaps.push_back((best - means[runs[r].selected[t - 1].index]) / best);
  }
  result.included = gaps.size();
  if (!gaps.empty()) result.value = nearest_rank_percentile(std::move(gaps), pct);
  return result;
}

Summary summarize(const TrialSet& trials, std::span<const double> deltas) {
  Summary summary;
  summary.deltas.assign(deltas.begin(), deltas.end());
  std::vector<std::vector<double>> id_curves;
  for (const auto& method : trials.methods) {
    MethodSummary ms;
    ms.kind = method.kind;
    const auto id = identification_curve(method, trials.realizations);
    std::vector<std::vector<double>> near;
    for (double d : deltas) near.push_back(near_best_curve(method.runs, trials.realizations, d));
    for (std::size_t t = 1; t <= trials.budget; ++t) {
      CurvePoint p{t, id[t - 1], {}, 0.0};
      for (const auto& c : near) p.near_best.push_back(c[t - 1]);
      const auto gap = gap_percentile(method.runs, trials.realizations, t);
      p.gap_p95 = gap.value;
      ms.gap_excluded = gap.excluded;
      ms.curve.push_back(std::move(p));
    }
    ms.labels_to_full = labels_to_full(id);
    for (const auto& c : near) ms.near_best_labels.push_back(labels_to_full(c));
    id_curves.push_back(id);
    summary.methods.push_back(std::move(ms));
  }

  const MethodSummary* sel = nullptr;
  std::size_t sel_index = 0;
  for (std::size_t i = 0; i < summary.methods.size(); ++i) {
    if (summary.methods[i].kind == StrategyKind::select_llm) {
      sel = &summary.methods[i];
      sel_index = i;
    }
  }

  std::vector<std::pair<StrategyKind, std::optional<std::size_t>>> base_best;
  for (const auto& ms : summary.methods)
    if (ms.kind != StrategyKind::select_llm) base_best.emplace_back(ms.kind, ms.labels_to_full);
  summary.best_efficiency = efficiency(sel ? sel->labels_to_full : std::nullopt, base_best);
  for (std::size_t d = 0; d < deltas.size(); ++d) {
    std::vector<std::pair<StrategyKind, std::optional<std::size_t>>> base_near;
    for (const auto& ms : summary.methods)
      if (ms.kind != StrategyKind::select_llm) base_near.emplace_back(ms.kind, ms.near_best_labels[d]);
    summary.near_best_efficiency.push_back(
        efficiency(sel ? sel->near_best_labels[d] : std::nullopt, std::move(base_near)));
  }

  if (sel) {
    const auto& curve = id_curves[sel_index];
    for (double level : gap_levels()) {
      GapTableRow row{level, std::nullopt, {}};
      for (std::size_t t = 0; t < curve.size(); ++t) {
        if (curve[t] + 1e-12 >= level) {
          row.budget = t + 1;
          break;
        }
      }
      if (row.budget) {
        for (const auto& ms : summary.methods) row.gaps.emplace_back(ms.kind, ms.curve[*row.budget - 1].gap_p95);
      }
      summary.gap_table.push_back(std::move(row));
    }
  }
  return summary;
}

}  // namespace selectllm::harness
