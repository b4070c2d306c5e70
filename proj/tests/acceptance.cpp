// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "selectllm/cli.hpp"
#include "selectllm/harness.hpp"
#include "selectllm/io.hpp"
#include "selectllm/metrics.hpp"
#include "selectllm/selector.hpp"
#include "selectllm/synthetic.hpp"
#include "selectllm/tuner.hpp"

using namespace selectllm;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

unsigned workers() { return std::max(1u, std::thread::hardware_concurrency()); }

SimilarityTensor random_tensor(std::size_t n, std::size_t m, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::vector<double> e(n * m * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = j; k < m; ++k) {
        const double v = j == k ? 1.0 : uniform_real(rng, lo, hi);
        e[(i * m + j) * m + k] = v;
        e[(i * m + k) * m + j] = v;
      }
  return SimilarityTensor(n, m, std::move(e));
}

OracleScoreMatrix random_oracle(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<double> e(n * m);
  for (double& v : e) v = uniform_real(rng, 0, 1);
  return OracleScoreMatrix(n, m, std::move(e));
}

Posterior random_posterior(std::size_t m, Rng& rng) {
  std::vector<double> p(m);
  for (double& v : p) v = uniform_real(rng, 0.01, 1);
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= s;
  return Posterior(p);
}

// ---------------------------------------------------------------- synthetic validation

Outcome synthetic_validation() {
  synthetic::ValidationConfig cfg;
  cfg.seeds = 2000;
  cfg.threads = workers();
  const auto t0 = Clock::now();
  const auto result = synthetic::run_validation(cfg);
  const double secs = seconds_since(t0);
  bool ok = secs <= 600;
  std::string why;
  auto need = [&](bool cond, const std::string& msg) {
    if (!cond) {
      ok = false;
      why += " " + msg;
    }
  };
  double m2_top1 = 1, m2_top5_dev = 0, min_spear = 1, min_pair = 1;
  double top1_5 = -1, top1_10 = -1, top1_20 = -1;
  for (const auto& r : result.rows) {
    min_spear = std::min(min_spear, r.spearman);
    min_pair = std::min(min_pair, r.pairwise_accuracy);
    if (r.m == 2) {
      m2_top1 = std::min(m2_top1, r.top1_recall);
      m2_top5_dev = std::max(m2_top5_dev, std::abs(r.top5pct_recall - 1.0));
    }
    if (r.m == 5 && r.max_p == 0.2) top1_5 = r.top1_recall;
    if (r.m == 10 && r.max_p == 0.1) top1_10 = r.top1_recall;
    if (r.m == 20 && r.max_p == 0.05) top1_20 = r.top1_recall;
  }
  need(result.rows.size() == 20, "rows");
  need(m2_top1 >= 0.995, "m2 top1");
  need(m2_top5_dev <= 0.003, "m2 top5");
  need(std::abs(top1_5 - 0.912) <= 0.03, "m5 top1");
  need(std::abs(top1_10 - 0.915) <= 0.03, "m10 top1");
  need(std::abs(top1_20 - 0.920) <= 0.03, "m20 top1");
  need(min_spear >= 0.990, "spearman");
  need(min_pair >= 0.975, "pairwise");
  need(result.normalizer_terms == result.normalizers * 256, "normalizer terms");
  return {ok, "m2 top1 min " + fmt(m2_top1) + ", m5/0.2 " + fmt(top1_5) + ", m10/0.1 " + fmt(top1_10) + ", m20/0.05 " +
                  fmt(top1_20) + ", spearman min " + fmt(min_spear) + ", pairwise min " + fmt(min_pair) + ", " +
                  fmt(secs, 1) + "s" + why};
}

// ---------------------------------------------------------------- exact MI

double brute_cos(std::uint32_t x, std::uint32_t y) {
  if (x == 0 || y == 0) return 0.0;
  return std::popcount(x & y) / std::sqrt(static_cast<double>(std::popcount(x)) * std::popcount(y));
}

double brute_mi(const std::vector<std::uint32_t>& out, const std::vector<double>& p, unsigned d, double tau) {
  const std::uint32_t N = 1u << d;
  std::vector<std::vector<double>> lik(out.size(), std::vector<double>(N));
  for (std::size_t j = 0; j < out.size(); ++j) {
    double z = 0;
    for (std::uint32_t r = 0; r < N; ++r) z += std::exp(brute_cos(out[j], r) / tau);
    for (std::uint32_t r = 0; r < N; ++r) lik[j][r] = std::exp(brute_cos(out[j], r) / tau) / z;
  }
  double mi = 0;
  for (std::uint32_t r = 0; r < N; ++r) {
    double mix = 0;
    for (std::size_t j = 0; j < out.size(); ++j) mix += p[j] * lik[j][r];
    for (std::size_t j = 0; j < out.size(); ++j)
      if (p[j] > 0) mi += p[j] * lik[j][r] * std::log(lik[j][r] / mix);
  }
  return mi;
}

Outcome exact_mi_equivalence() {
  Rng rng = make_rng(2024, {1});
  std::size_t matches = 0, instances = 0;
  for (unsigned d : {2u, 3u}) {
    const synthetic::BinaryResponseSpace space(d, 1.0);
    std::vector<std::vector<std::uint32_t>> pool;
    for (std::uint32_t x = 1; x < (1u << d); ++x)
      for (std::uint32_t y = 1; y < (1u << d); ++y) pool.push_back({x, y});
    for (int c = 0; c < 1000; ++c) {
      const double p0 = uniform_real(rng, 0.05, 0.95);
      const std::vector<double> p{p0, 1 - p0};
      const Posterior post(p);
      std::vector<double> rule(pool.size()), mi(pool.size());
      for (std::size_t q = 0; q < pool.size(); ++q) {
        rule[q] = synthetic::rule_score(pool[q], p, space);
        mi[q] = synthetic::exact_mi(pool[q], post, space);
      }
      const double rmin = *std::min_element(rule.begin(), rule.end());
      const double mmax = *std::max_element(mi.begin(), mi.end());
      bool hit = false;
      for (std::size_t q = 0; q < pool.size() && !hit; ++q)
        hit = rule[q] <= rmin + 1e-12 && mi[q] >= mmax - 1e-12;
      matches += hit;
      ++instances;
    }
  }
  const double rate = static_cast<double>(matches) / static_cast<double>(instances);

  double worst = 0;
  for (int c = 0; c < 100; ++c) {
    const unsigned d = 2 + static_cast<unsigned>(uniform_below(rng, 2));
    const std::size_t m = 2 + uniform_below(rng, 3);
    const double tau = uniform_real(rng, 0.3, 3.0);
    std::vector<std::uint32_t> out(m);
    for (auto& o : out) o = 1 + static_cast<std::uint32_t>(uniform_below(rng, (1u << d) - 1));
    const auto post = random_posterior(m, rng);
    std::vector<double> p(post.probs().begin(), post.probs().end());
    const synthetic::BinaryResponseSpace space(d, tau);
    worst = std::max(worst, std::abs(synthetic::exact_mi(out, post, space) - brute_mi(out, p, d, tau)));
  }
  return {rate >= 0.95 && worst <= 1e-10,
          "argmin/argmax agreement " + fmt(rate) + " over " + std::to_string(instances) + " instances, brute-force max error " +
              sci(worst)};
}

// ---------------------------------------------------------------- derivations

Outcome derivations() {
  const auto r = synthetic::derivation_checks(99, 10000);
  return {r.passed && r.instances == 10000 && r.variance_max_error <= 1e-12 && r.kernel_max_error <= 1e-12 &&
              r.taylor_worst_ratio <= 1.0 && r.taylor_at_one == 0.0,
          "variance err " + sci(r.variance_max_error) + ", kernel err " + sci(r.kernel_max_error) +
              ", taylor worst ratio " + fmt(r.taylor_worst_ratio)};
}

// ---------------------------------------------------------------- posterior suite

Outcome posterior_suite() {
  Rng rng = make_rng(2024, {4});
  const int cases = 10000;
  double norm_err = 0, comm_err = 0, shift_err = 0;
  std::size_t choice_mismatch = 0;
  auto random_row = [&](std::size_t m) {
    std::vector<double> r(m);
    for (double& v : r) v = uniform_real(rng, -1, 1);
    return r;
  };
  for (int c = 0; c < cases; ++c) {
    const std::size_t m = 1 + uniform_below(rng, 12);
    const auto p = random_posterior(m, rng);
    const double tau = uniform_real(rng, 0.05, 5.0);
    const auto a = random_row(m), b = random_row(m);

    const auto q = posterior_update(p, a, tau);
    norm_err = std::max(norm_err, std::abs(std::accumulate(q.probs().begin(), q.probs().end(), 0.0) - 1.0));

    const auto ab = posterior_update(q, b, tau);
    const auto ba = posterior_update(posterior_update(p, b, tau), a, tau);
    for (std::size_t j = 0; j < m; ++j) comm_err = std::max(comm_err, std::abs(ab[j] - ba[j]));

    const double shift = uniform_real(rng, -3, 3);
    std::vector<double> shifted = a;
    for (double& v : shifted) v += shift;
    const auto qs = posterior_update(p, shifted, tau);
    for (std::size_t j = 0; j < m; ++j) shift_err = std::max(shift_err, std::abs(qs[j] - q[j]));
  }
  for (int c = 0; c < cases; ++c) {
    const std::size_t n = 2 + uniform_below(rng, 20), m = 2 + uniform_below(rng, 8);
    const auto S = random_tensor(n, m, rng, -1, 1);
    const auto p = random_posterior(m, rng);
    const double shift = uniform_real(rng, -0.5, 0.5);
    std::vector<double> e(S.entries().begin(), S.entries().end());
    for (double& v : e) v += shift;
    const SimilarityTensor T(n, m, std::move(e));
    std::vector<QueryId> pool;
    for (std::size_t i = 0; i < n; ++i)
      if (uniform_below(rng, 4) != 0 || pool.empty()) pool.push_back(QueryId{i});
    choice_mismatch += select_next(pool, p, S) != select_next(pool, p, T);
  }
  return {norm_err <= 1e-9 && comm_err <= 1e-12 && shift_err <= 1e-12 && choice_mismatch == 0,
          "normalization " + sci(norm_err) + ", commutativity " + sci(comm_err) + ", row shift " +
              sci(shift_err) + ", tensor-shift choice mismatches " + std::to_string(choice_mismatch) + " (" +
              std::to_string(cases) + " cases each)"};
}

// ---------------------------------------------------------------- metrics

std::size_t brute_lcs(const metrics::TokenSequence& a, const metrics::TokenSequence& b) {
  const auto& s = a.size() <= b.size() ? a : b;
  const auto& t = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << s.size()); ++mask) {
    const std::size_t len = static_cast<std::size_t>(std::popcount(mask));
    if (len <= best) continue;
    std::size_t pos = 0;
    bool ok = true;
    for (std::size_t i = 0; i < s.size() && ok; ++i) {
      if (!((mask >> i) & 1u)) continue;
      while (pos < t.size() && t[pos] != s[i]) ++pos;
      if (pos == t.size()) ok = false;
      else ++pos;
    }
    if (ok) best = len;
  }
  return best;
}

Outcome metric_goldens() {
  using namespace metrics;
  std::vector<std::string> failed;
  auto check = [&](bool cond, const char* name) {
    if (!cond) failed.push_back(name);
  };
  check(tokenize("The cat sat.") == TokenSequence{"the", "cat", "sat"}, "tokenize");
  check(tokenize("\"Hello,\" she said!") == TokenSequence{"hello", "she", "said"}, "tokenize punctuation");
  check(exact_match("Paris", "Paris") == 1.0 && exact_match("Paris", "paris") == 0.0, "exact_match");
  check(exact_match(" Paris ", "Paris") == 1.0, "exact_match trim");
  check(token_f1("a b c", "a b c") == 1.0 && token_f1("a b", "b c") == 0.5 && token_f1("a", "b") == 0.0, "token_f1");
  check(std::abs(token_f1("a a a", "a b") - 0.4) < 1e-15, "token_f1 clipping");
  check(bleu_n("the quick brown fox jumps", "the quick brown fox jumps") == 1.0, "bleu identical");
  check(bleu_n("x y z w", "a b c d") == 0.0, "bleu disjoint");
  check(std::abs(bleu_n("the cat sat on the mat", "the cat sat on a mat") - 0.537284965911771) < 1e-12, "bleu golden");
  check(std::abs(bleu_n("a b", "a b c d", 1, std::vector<double>{1.0}) - std::exp(-1.0)) < 1e-15, "bleu brevity");
  check(bleu_n("a b c", "a b c", 4) == 0.0, "bleu short");
  check(rouge_n("a b c", "a b d", 2) == 0.5 && rouge_n("a b", "c d", 1) == 0.0, "rouge_n");
  check(std::abs(rouge_l("a c", "a b c") - 0.8) < 1e-15 && rouge_l("x", "y") == 0.0, "rouge_l");
  check(cosine_binary(std::vector<std::uint8_t>{1, 1, 0}, std::vector<std::uint8_t>{1, 0, 1}) == 0.5, "cosine");
  check(cosine_binary(std::vector<std::uint8_t>{1, 0, 1}, std::vector<std::uint8_t>{0, 0, 0}) == 0.0, "cosine zero");

  Rng rng = make_rng(2024, {5});
  std::size_t lcs_mismatch = 0;
  for (int c = 0; c < 1000; ++c) {
    auto text = [&] {
      std::string s;
      const std::size_t len = uniform_below(rng, 13);
      for (std::size_t i = 0; i < len; ++i) {
        if (i) s += ' ';
        s += static_cast<char>('a' + uniform_below(rng, 4));
      }
      return s;
    };
    const auto a = tokenize(text()), b = tokenize(text());
    const std::size_t lcs = brute_lcs(a, b);
    const double expected = lcs == 0 ? 0.0
                                     : 2.0 * (double(lcs) / a.size()) * (double(lcs) / b.size()) /
                                           (double(lcs) / a.size() + double(lcs) / b.size());
    lcs_mismatch += lcs_length(a, b) != lcs || std::abs(rouge_l(a, b) - expected) > 1e-15;
  }
  std::string detail = std::to_string(15 - failed.size()) + "/15 golden groups, LCS oracle mismatches " +
                       std::to_string(lcs_mismatch) + "/1000";
  for (const auto& f : failed) detail += " [" + f + "]";
  return {failed.empty() && lcs_mismatch == 0, detail};
}

// ---------------------------------------------------------------- harness

Outcome harness_protocol() {
  const auto methods = baselines::all_strategies();
  Rng rng = make_rng(2024, {6});
  bool full_ok = true;
  for (int b = 0; b < 3; ++b) {
    const std::size_t pool = 60 + 20 * b, m = 3 + b, n = 30;
    const auto S = random_tensor(pool, m, rng);
    const auto O = random_oracle(pool, m, rng);
    const auto trials =
        harness::run_trials(S, O, methods, harness::RealizationPlan{pool, n, 100, 0, static_cast<std::uint64_t>(b)}, 1.0,
                            workers());
    for (const auto& method : trials.methods) full_ok = full_ok && harness::identification_curve(method, trials.realizations).back() == 1.0;
  }

  bool dom_ok = true;
  {
    const std::size_t pool = 50, m = 4;
    const auto S = random_tensor(pool, m, rng);
    std::vector<double> o(pool * m);
    for (std::size_t i = 0; i < pool; ++i) {
      o[i * m] = uniform_real(rng, 0.6, 1.0);
      for (std::size_t j = 1; j < m; ++j) o[i * m + j] = o[i * m] - 0.1 - uniform_real(rng, 0, 0.5);
    }
    const OracleScoreMatrix O(pool, m, o);
    const auto trials = harness::run_trials(S, O, methods, harness::RealizationPlan{pool, 25, 100, 0, 1}, 1.0, workers());
    for (const auto& method : trials.methods)
      for (double v : harness::identification_curve(method, trials.realizations)) dom_ok = dom_ok && v == 1.0;
  }

  const auto eff = harness::efficiency(20, {{baselines::StrategyKind::random, 110}});
  const bool eff_ok = eff.reduction && std::abs(*eff.reduction - 0.818) < 5e-4;

  // Planted separation: Select-LLM with an annotation-free tau versus Random.
  std::size_t wins = 0;
  const std::size_t bundles = 50;
  const std::vector<baselines::StrategyKind> pair{baselines::StrategyKind::select_llm, baselines::StrategyKind::random};
  for (std::size_t s = 0; s < bundles; ++s) {
    const auto b = io::make_planted_bundle(io::PlantedConfig{200, 4, 16, 0.5, {}, 1000 + s});
    const auto tuned = tuner::tune_tau(b.similarity, tuner::TauGrid::search_default(),
                                       tuner::TuneConfig{20, 100, s, workers()});
    const auto trials = harness::run_trials(b.similarity, *b.oracle, pair, harness::RealizationPlan{200, 100, 100, 0, s},
                                            tuned.tau, workers());
    const auto sel = harness::labels_to_full(harness::identification_curve(trials.methods[0], trials.realizations));
    const auto rnd = harness::labels_to_full(harness::identification_curve(trials.methods[1], trials.realizations));
    wins += sel.value_or(SIZE_MAX) <= rnd.value_or(SIZE_MAX);
  }
  const double win_rate = static_cast<double>(wins) / static_cast<double>(bundles);
  return {full_ok && dom_ok && eff_ok && win_rate >= 0.9,
          std::string("full-budget ") + (full_ok ? "ok" : "broken") + ", dominance " + (dom_ok ? "ok" : "broken") +
              ", efficiency " + (eff.reduction ? fmt(*eff.reduction) : "undefined") + ", planted separation " +
              std::to_string(wins) + "/" + std::to_string(bundles)};
}

// ---------------------------------------------------------------- performance

fs::path scratch(const std::string& name) {
  return fs::temp_directory_path() / ("selectllm-accept-" + std::to_string(::getpid()) + "-" + name);
}

Outcome performance() {
  Rng rng = make_rng(2024, {7});
  const std::size_t n = 500, m = 30;
  const auto S = random_tensor(n, m, rng);
  const auto O = random_oracle(n, m, rng);
  MatrixOracle oracle(O);
  const auto t0 = Clock::now();
  const auto run = run_select_llm(S, oracle, 1.0, n, uniform_prior(m));
  const double single = seconds_since(t0);
  bool costs_ok = run.step_costs.size() == n;
  for (std::size_t t = 0; t < run.step_costs.size() && costs_ok; ++t) costs_ok = run.step_costs[t] == (n - t) * m * m;

  const fs::path bundle = scratch("perf-bundle"), out = scratch("perf-out");
  io::write_bundle(io::make_planted_bundle(io::PlantedConfig{1000, 10, 16, 0.5, {}, 5}), bundle);
  const std::string bundle_s = bundle.string(), out_s = out.string(), threads = std::to_string(workers());
  const char* argv[] = {"selectllm", "simulate", "--bundle", bundle_s.c_str(), "--preset", "desk", "--size", "500",
                        "--tau", "1.0", "--seed", "3", "--threads", threads.c_str(), "--out", out_s.c_str()};
  std::ostringstream sink_out, sink_err;
  const auto t1 = Clock::now();
  const int code = run_cli(static_cast<int>(std::size(argv)), argv, sink_out, sink_err);
  const double desk = seconds_since(t1);
  std::size_t curve_files = 0;
  if (fs::is_directory(out / "curves"))
    for (const auto& e : fs::directory_iterator(out / "curves")) curve_files += e.is_regular_file();
  fs::remove_all(bundle);
  fs::remove_all(out);
  return {single <= 2.0 && costs_ok && code == 0 && curve_files == 6 && desk <= 300,
          "n=500 m=30 b=500 in " + fmt(single, 3) + "s, step costs " + (costs_ok ? "exact" : "wrong") +
              ", desk run (100 realizations x 6 methods, n=500) " + fmt(desk, 1) + "s on " + threads + " worker(s)"};
}

// ---------------------------------------------------------------- determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path bundle = scratch("det-bundle"), a = scratch("det-a"), b = scratch("det-b");
  const std::string tool = SELECTLLM_TOOL;
  const std::string gen = tool + " generate --n 150 --m 5 --seed 21 --out " + bundle.string() + " > /dev/null";
  const std::string sim = tool + " simulate --bundle " + bundle.string() +
                          " --realizations 50 --size 80 --tau auto --tune-realizations 10 --seed 5 --out ";
  bool ok = std::system(gen.c_str()) == 0;
  ok = ok && std::system((sim + a.string() + " --threads 1 > /dev/null").c_str()) == 0;
  ok = ok && std::system((sim + b.string() + " --threads 4 > /dev/null").c_str()) == 0;
  std::size_t files = 0, differing = 0;
  if (ok) {
    for (const auto& e : fs::recursive_directory_iterator(a)) {
      if (!e.is_regular_file()) continue;
      ++files;
      const fs::path other = b / fs::relative(e.path(), a);
      differing += !fs::exists(other) || slurp(e.path()) != slurp(other);
    }
    std::size_t files_b = 0;
    for (const auto& e : fs::recursive_directory_iterator(b)) files_b += e.is_regular_file();
    ok = files == files_b && differing == 0 && files > 0;
  }
  fs::remove_all(bundle);
  fs::remove_all(a);
  fs::remove_all(b);
  return {ok, std::to_string(files) + " archive files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"synthetic-validation", synthetic_validation},
      {"exact-mi-equivalence", exact_mi_equivalence},
      {"derivation-properties", derivations},
      {"posterior-suite", posterior_suite},
      {"metric-goldens", metric_goldens},
      {"harness-protocol", harness_protocol},
      {"performance", performance},
      {"determinism", determinism},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
