#include "selectllm/selector.hpp"

#include <algorithm>
#include <stdexcept>

namespace selectllm {

double selection_score(QueryId q, const Posterior& p, const SimilarityTensor& S, ScoringStats* stats) {
  if (q.index >= S.queries()) throw std::invalid_argument("selection_score: query index out of range");
  const std::size_t m = S.models();
  if (p.size() != m) throw std::invalid_argument("selection_score: posterior size does not match tensor");
  const auto block = S.query(q.index);
  const auto probs = p.probs();
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double* row = block.data() + j * m;
    double inner = 0.0;
    for (std::size_t k = 0; k < m; ++k) inner += row[k] * probs[k];
    total += probs[j] * inner;
  }
  if (stats) stats->entries_scored += m * m;
  return total;
}

QueryId select_next(std::span<const QueryId> pool, const Posterior& p, const SimilarityTensor& S,
                    ScoringStats* stats) {
  if (pool.empty()) throw std::logic_error("select_next: pool is empty");
  QueryId best = pool.front();
  double best_score = selection_score(best, p, S, stats);
  for (std::size_t i = 1; i < pool.size(); ++i) {
    const double s = selection_score(pool[i], p, S, stats);
    if (s < best_score || (s == best_score && pool[i] < best)) {
      best = pool[i];
      best_score = s;
    }
  }
  return best;
}

QueryId select_next(const SessionState& state, const SimilarityTensor& S, ScoringStats* stats) {
  return select_next(state.pool, state.posterior, S, stats);
}

ModelId empirical_best(const AnnotatedSet& annotated) {
  if (annotated.empty()) throw std::logic_error("empirical_best: no annotations");
  ScoreSums sums(annotated.models());
  for (const auto& item : annotated.items()) sums.add(item.oracle_row);
  return sums.argmax();
}

std::optional<std::vector<double>> MatrixOracle::annotate(QueryId q) {
  if (q.index >= matrix_->queries()) return std::nullopt;
  auto row = matrix_->row(q.index);
  return std::vector<double>(row.begin(), row.end());
}

SelectLlmLoop::SelectLlmLoop(const SimilarityTensor& S, double tau, std::size_t budget, Posterior prior)
    : tensor_(&S),
      state_(SessionState::start(S.queries(), std::move(prior), tau, budget)),
      sums_(S.models()) {
  if (state_.posterior.size() != S.models())
    throw std::invalid_argument("select-llm: prior size does not match the model count");
}

QueryId SelectLlmLoop::propose() const {
  if (finished()) throw std::logic_error("select-llm: budget exhausted");
  const auto before = stats_.entries_scored;
  const QueryId q = select_next(state_, *tensor_, &stats_);
  pending_cost_ = stats_.entries_scored - before;
  return q;
}

const TrajectoryRecord& SelectLlmLoop::observe(QueryId q, std::vector<double> oracle_row) {
  if (finished()) throw std::logic_error("select-llm: budget exhausted");
  auto it = std::lower_bound(state_.pool.begin(), state_.pool.end(), q);
  if (it == state_.pool.end() || *it != q) throw std::invalid_argument("select-llm: query not in pool");
  Posterior updated = posterior_update(state_.posterior, oracle_row, state_.tau);
  sums_.add(oracle_row);
  state_.pool.erase(it);
  state_.annotated.add(q, oracle_row);
  state_.posterior = updated;
  trajectory_.records.push_back(
      {state_.step, q, std::move(oracle_row), updated, sums_.argmax(), map_best(updated)});
  ++state_.step;
  step_costs_.push_back(pending_cost_);
  pending_cost_ = 0;
  return trajectory_.records.back();
}

RunResult run_select_llm(const SimilarityTensor& S, AnnotationSource& oracle, double tau,
                         std::size_t budget, const Posterior& prior) {
  SelectLlmLoop loop(S, tau, budget, prior);
  RunResult result;
  while (!loop.finished()) {
    const QueryId q = loop.propose();
    auto row = oracle.annotate(q);
    if (!row || row->size() != S.models()) {
      result.status = RunStatus::oracle_failure;
      result.message = "oracle failed to annotate query " + std::to_string(q.index) + " at step " +
                       std::to_string(loop.state().step);
      break;
    }
    loop.observe(q, std::move(*row));
  }
  result.trajectory = loop.trajectory();
  result.final_map_best = map_best(loop.state().posterior);
  result.step_costs = loop.step_costs();
  return result;
}

}  // namespace selectllm
