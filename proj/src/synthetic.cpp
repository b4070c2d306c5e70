#include "selectllm/synthetic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "selectllm/parallel.hpp"
#include "selectllm/random.hpp"

namespace selectllm::synthetic {

BinaryResponseSpace::BinaryResponseSpace(unsigned d, double tau) : d_(d), size_(std::size_t{1} << d), tau_(tau) {
  if (d < 1 || d > 10) throw std::invalid_argument("binary space: dimension must be in [1, 10]");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("binary space: tau must be positive");
  cosine_.assign(size_ * size_, 0.0);
  kernel_.assign(size_ * size_, 0.0);
  for (std::uint32_t x = 0; x < size_; ++x)
    for (std::uint32_t y = 0; y < size_; ++y) {
      const int nx = std::popcount(x), ny = std::popcount(y);
      const double c = (nx == 0 || ny == 0)
                           ? 0.0
                           : std::popcount(x & y) / std::sqrt(static_cast<double>(nx) * static_cast<double>(ny));
      cosine_[x * size_ + y] = c;
      kernel_[x * size_ + y] = std::exp(c / tau);
    }
}

QueryLikelihoods query_likelihoods(std::span<const std::uint32_t> outputs, const BinaryResponseSpace& space,
                                   std::uint64_t* normalizer_terms) {
  const std::size_t m = outputs.size(), N = space.size();
  QueryLikelihoods q;
  q.models = m;
  q.space = N;
  q.likelihood.resize(m * N);
  q.log_likelihood.resize(m * N);
  for (std::size_t j = 0; j < m; ++j) {
    const std::uint32_t f = outputs[j];
    if (f >= N) throw std::invalid_argument("binary space: output outside the space");
    double z = 0.0;
    for (std::uint32_t r = 0; r < N; ++r) z += space.kernel(f, static_cast<std::uint32_t>(r));
    if (normalizer_terms) *normalizer_terms += N;
    const double log_z = std::log(z);
    for (std::uint32_t r = 0; r < N; ++r) {
      q.likelihood[j * N + r] = space.kernel(f, r) / z;
      q.log_likelihood[j * N + r] = space.cosine(f, r) / space.tau() - log_z;
    }
  }
  return q;
}

double mutual_information(const QueryLikelihoods& lik, std::span<const double> posterior) {
  if (posterior.size() != lik.models) throw std::invalid_argument("mutual information: posterior length mismatch");
  const std::size_t N = lik.space;
  std::vector<double> log_mix(N, 0.0);
  for (std::size_t j = 0; j < lik.models; ++j) {
    if (posterior[j] == 0.0) continue;
    for (std::size_t r = 0; r < N; ++r) log_mix[r] += posterior[j] * lik.likelihood[j * N + r];
  }
  for (double& v : log_mix) v = std::log(v);
  double mi = 0.0;
  for (std::size_t j = 0; j < lik.models; ++j) {
    if (posterior[j] == 0.0) continue;
    double inner = 0.0;
    for (std::size_t r = 0; r < N; ++r)
      inner += lik.likelihood[j * N + r] * (lik.log_likelihood[j * N + r] - log_mix[r]);
    mi += posterior[j] * inner;
  }
  return std::max(mi, 0.0);
}

double exact_mi(std::span<const std::uint32_t> outputs, const Posterior& posterior,
                const BinaryResponseSpace& space) {
  return mutual_information(query_likelihoods(outputs, space), posterior.probs());
}

double rule_score(std::span<const std::uint32_t> outputs, std::span<const double> posterior,
                  const BinaryResponseSpace& space) {
  const std::size_t m = outputs.size();
  if (posterior.size() != m) throw std::invalid_argument("rule score: posterior length mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    if (posterior[j] == 0.0) continue;
    double row = 0.0;
    for (std::size_t k = 0; k < m; ++k) row += posterior[k] * space.cosine(outputs[j], outputs[k]);
    s += posterior[j] * row;
  }
  return s;
}

Posterior max_posterior(std::size_t m, double max_p) {
  if (m == 0) throw std::invalid_argument("max posterior: no models");
  if (!(max_p <= 1.0) || max_p * static_cast<double>(m) < 1.0 - 1e-12)
    throw std::invalid_argument("max posterior: maxP must lie in [1/m, 1]");
  if (m == 1) return Posterior({1.0});
  std::vector<double> p(m, (1.0 - max_p) / static_cast<double>(m - 1));
  p[0] = max_p;
  return Posterior(std::move(p));
}

std::vector<double> average_ranks(std::span<const double> values, double tolerance) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t k = i + 1;
    while (k < n && values[order[k]] - values[order[i]] <= tolerance) ++k;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(k)) / 2.0;
    for (std::size_t g = i; g < k; ++g) ranks[order[g]] = avg;
    i = k;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b, double tolerance) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("spearman: needs at least two values");
  const auto ra = average_ranks(a, tolerance), rb = average_ranks(b, tolerance);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double x = ra[i] - mean, y = rb[i] - mean;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  if (saa == 0.0 && sbb == 0.0) return 1.0;
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double pairwise_accuracy(std::span<const double> a, std::span<const double> b, double tolerance) {
  if (a.size() != b.size()) throw std::invalid_argument("pairwise accuracy: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("pairwise accuracy: needs at least two values");
  const std::size_t n = a.size();
  double credit = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = i + 1; k < n; ++k) {
      const double da = a[i] - a[k], db = b[i] - b[k];
      const bool ta = std::abs(da) <= tolerance, tb = std::abs(db) <= tolerance;
      if (ta && tb)
        credit += 1.0;
      else if (ta || tb)
        credit += 0.5;
      else if ((da > 0) == (db > 0))
        credit += 1.0;
    }
  return credit / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

std::vector<double> default_max_p(std::size_t m) {
  switch (m) {
    case 2: return {0.5, 0.6, 0.7, 0.8, 0.9};
    case 5: return {0.2, 0.35, 0.5, 0.7, 0.9};
    case 10: return {0.1, 0.3, 0.5, 0.7, 0.9};
    case 20: return {0.05, 0.3, 0.5, 0.7, 0.9};
    default:
      throw std::invalid_argument("synthetic: no default maxP values for m = " + std::to_string(m) +
                                  "; pass them explicitly");
  }
}

namespace {

struct SeedScore {
  double top1 = 0, top5 = 0, spearman = 0, pairwise = 0;
};

struct SeedOutput {
  std::vector<SeedScore> rows;  // one per maxP
  std::vector<ScatterPoint> scatter;
  std::uint64_t terms = 0;
};

SeedOutput run_seed(std::size_t m, std::size_t seed_index, const std::vector<Posterior>& posteriors,
                    const std::vector<double>& max_ps, const ValidationConfig& cfg, const BinaryResponseSpace& space,
                    bool keep_scatter) {
  SeedOutput out;
  Rng rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(seed_index)});
  const std::size_t n = cfg.n_syn;
  std::vector<std::uint32_t> outputs(n * m);
  for (auto& o : outputs) o = 1 + static_cast<std::uint32_t>(uniform_below(rng, space.size() - 1));

  std::vector<QueryLikelihoods> lik;
  lik.reserve(n);
  for (std::size_t q = 0; q < n; ++q)
    lik.push_back(query_likelihoods(std::span(outputs).subspan(q * m, m), space, &out.terms));

  const std::size_t k5 = (5 * n + 99) / 100;
  const double tol = cfg.tie_tolerance;
  std::vector<double> neg_score(n), mi(n);
  for (std::size_t row = 0; row < posteriors.size(); ++row) {
    const auto p = posteriors[row].probs();
    for (std::size_t q = 0; q < n; ++q) {
      neg_score[q] = -rule_score(std::span(outputs).subspan(q * m, m), p, space);
      mi[q] = mutual_information(lik[q], p);
    }
    SeedScore s;
    if (n < 2) {
      s = {1, 1, 1, 1};
    } else {
      const double best_rule = *std::max_element(neg_score.begin(), neg_score.end());
      const double best_mi = *std::max_element(mi.begin(), mi.end());
      std::vector<double> sorted = mi;
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k5 - 1), sorted.end(),
                       std::greater<>());
      const double kth = sorted[k5 - 1];
      for (std::size_t q = 0; q < n; ++q) {
        if (neg_score[q] < best_rule - tol) continue;
        if (mi[q] >= best_mi - tol) s.top1 = 1;
        if (mi[q] >= kth - tol) s.top5 = 1;
      }
      s.spearman = spearman(neg_score, mi, tol);
      s.pairwise = pairwise_accuracy(neg_score, mi, tol);
      if (keep_scatter) {
        // Rank 1 = the rule's first choice / the highest MI.
        const auto rr = average_ranks(neg_score, tol), mr = average_ranks(mi, tol);
        for (std::size_t q = 0; q < n; ++q)
          out.scatter.push_back({m, max_ps[row], seed_index, q, static_cast<double>(n) + 1.0 - rr[q],
                                 static_cast<double>(n) + 1.0 - mr[q]});
      }
    }
    out.rows.push_back(s);
  }
  return out;
}

}  // namespace

ValidationResult run_validation(const ValidationConfig& cfg) {
  if (cfg.n_syn == 0) throw std::invalid_argument("synthetic: n_syn must be positive");
  if (cfg.seeds == 0) throw std::invalid_argument("synthetic: seeds must be positive");
  if (!cfg.max_p.empty() && cfg.max_p.size() != cfg.model_counts.size())
    throw std::invalid_argument("synthetic: one maxP list per model count");
  if (!(cfg.tie_tolerance >= 0.0)) throw std::invalid_argument("synthetic: tie tolerance must be non-negative");
  const BinaryResponseSpace space(cfg.d, cfg.tau);
  const unsigned threads = resolve_threads(cfg.threads);

  ValidationResult result;
  for (std::size_t mi = 0; mi < cfg.model_counts.size(); ++mi) {
    const std::size_t m = cfg.model_counts[mi];
    if (m < 1) throw std::invalid_argument("synthetic: m must be positive");
    const std::vector<double> max_ps =
        (cfg.max_p.empty() || cfg.max_p[mi].empty()) ? default_max_p(m) : cfg.max_p[mi];
    std::vector<Posterior> posteriors;
    for (double v : max_ps) posteriors.push_back(max_posterior(m, v));

    std::vector<SeedOutput> slots(cfg.seeds);
    parallel_for(cfg.seeds, threads, [&](std::size_t s) {
      slots[s] = run_seed(m, s, posteriors, max_ps, cfg, space, s < cfg.scatter_seeds);
    });

    for (std::size_t row = 0; row < max_ps.size(); ++row) {
      AgreementReport rep{m, max_ps[row], 0, 0, 0, 0, cfg.seeds};
      for (const auto& slot : slots) {
        rep.top1_recall += slot.rows[row].top1;
        rep.top5pct_recall += slot.rows[row].top5;
        rep.spearman += slot.rows[row].spearman;
        rep.pairwise_accuracy += slot.rows[row].pairwise;
      }
      const double k = static_cast<double>(cfg.seeds);
      rep.top1_recall /= k;
      rep.top5pct_recall /= k;
      rep.spearman /= k;
      rep.pairwise_accuracy /= k;
      result.rows.push_back(rep);
    }
    for (const auto& slot : slots) {
      result.normalizer_terms += slot.terms;
      result.scatter.insert(result.scatter.end(), slot.scatter.begin(), slot.scatter.end());
    }
    result.normalizers += static_cast<std::uint64_t>(cfg.seeds) * cfg.n_syn * m;
  }
  return result;
}

DerivationReport derivation_checks(std::uint64_t seed, std::size_t instances) {
  DerivationReport rep;
  rep.instances = instances;
  Rng rng = make_rng(seed, {0xD1u});
  const double C = 1.0 / (6.0 * 0.8 * 0.8);
  bool ok = true;

  auto remainder = [](double x) { return x * std::log(x) - (x - 1.0) - 0.5 * (x - 1.0) * (x - 1.0); };
  rep.taylor_at_one = std::abs(remainder(1.0));
  ok = ok && rep.taylor_at_one == 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    double x = uniform_real(rng, 0.8, 1.2);
    if (i == 0) x = 0.8;
    if (i == 1) x = 1.2;
    const double h = std::abs(x - 1.0);
    const double r = std::abs(remainder(x));
    const double bound = C * h * h * h;
    if (r > bound + 1e-15) ok = false;
    if (h > 1e-3) rep.taylor_worst_ratio = std::max(rep.taylor_worst_ratio, r / bound);
  }

  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t m = 1 + static_cast<std::size_t>(uniform_below(rng, 20));
    std::vector<double> w(m), a(m);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      w[j] = uniform_real(rng, 0.01, 1.0);
      a[j] = uniform_real(rng, -1.0, 1.0);
      total += w[j];
    }
    for (double& v : w) v /= total;
    double mean = 0.0, second = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      mean += w[j] * a[j];
      second += w[j] * a[j] * a[j];
    }
    double centered = 0.0, pairwise = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      centered += w[j] * (a[j] - mean) * (a[j] - mean);
      for (std::size_t k = 0; k < m; ++k) pairwise += 0.5 * w[j] * w[k] * (a[j] - a[k]) * (a[j] - a[k]);
    }
    const double err = std::max(std::abs(centered - (second - mean * mean)), std::abs(centered - pairwise));
    rep.variance_max_error = std::max(rep.variance_max_error, err);
  }
  ok = ok && rep.variance_max_error <= 1e-12;

  for (std::size_t i = 0; i < instances; ++i) {
    const unsigned d = 1 + static_cast<unsigned>(uniform_below(rng, 16));
    const std::uint64_t span = (std::uint64_t{1} << d) - 1;
    const std::uint32_t x = 1 + static_cast<std::uint32_t>(uniform_below(rng, span));
    const std::uint32_t y = 1 + static_cast<std::uint32_t>(uniform_below(rng, span));
    const double nx = std::sqrt(static_cast<double>(std::popcount(x)));
    const double ny = std::sqrt(static_cast<double>(std::popcount(y)));
    double dist = 0.0;
    for (unsigned b = 0; b < d; ++b) {
      const double diff = ((x >> b) & 1u) / nx - ((y >> b) & 1u) / ny;
      dist += diff * diff;
    }
    const double cos = std::popcount(x & y) / (nx * ny);
    rep.kernel_max_error = std::max(rep.kernel_max_error, std::abs(dist - 2.0 * (1.0 - cos)));
  }
  ok = ok && rep.kernel_max_error <= 1e-12;
  rep.passed = ok;
  return rep;
}

}  // namespace selectllm::synthetic
