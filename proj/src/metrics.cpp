#include "selectllm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "selectllm/parallel.hpp"

namespace selectllm::metrics {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t offset;
  std::size_t length;
};

// Lenient UTF-8 decoding: an invalid byte decodes to itself as a one-byte unit.
std::vector<CodePoint> decode(std::string_view text) {
  std::vector<CodePoint> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    char32_t cp = b0;
    if (b0 >= 0xC0 && b0 < 0xE0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if (b0 >= 0xE0 && b0 < 0xF0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if (b0 >= 0xF0 && b0 < 0xF8) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len == 1 ? b0 < 0x80 : i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      len = 1;
      cp = b0;
    }
    out.push_back({cp, i, len});
    i += len;
  }
  return out;
}

void encode(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000;
}

bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  return c == 0xA1 || c == 0xA7 || c == 0xAB || c == 0xB6 || c == 0xB7 || c == 0xBB ||
         c == 0xBF || (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
         (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) ||
         (c >= 0xFF01 && c <= 0xFF0F);
}

char32_t to_lower(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 0x20;
  if (c < 0x80) return c;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 0x20;
  if (c >= 0x410 && c <= 0x42F) return c + 0x20;
  if (c >= 0x400 && c <= 0x40F) return c + 0x50;
  return c;
}

std::string_view trim(std::string_view s) {
  const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

using NgramCounts = std::unordered_map<std::string, std::size_t>;

NgramCounts ngram_counts(const TokenSequence& tokens, std::size_t order) {
  NgramCounts counts;
  if (order == 0 || tokens.size() < order) return counts;
  for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < order; ++k) {
      key.push_back('\x1f');
      key += tokens[i + k];
    }
    ++counts[std::move(key)];
  }
  return counts;
}

std::size_t clipped_overlap(const NgramCounts& candidate, const NgramCounts& reference) {
  std::size_t total = 0;
  for (const auto& [gram, c] : candidate) {
    auto it = reference.find(gram);
    if (it != reference.end()) total += std::min(c, it->second);
  }
  return total;
}

}  // namespace

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::exact_match: return "exact_match";
    case MetricKind::token_f1: return "token_f1";
    case MetricKind::bleu4: return "bleu4";
    case MetricKind::rouge1: return "rouge1";
    case MetricKind::rouge2: return "rouge2";
    case MetricKind::rougeL: return "rougeL";
    case MetricKind::cosine_binary: return "cosine_binary";
    case MetricKind::precomputed: return "precomputed";
  }
  return "unknown";
}

std::optional<MetricKind> parse_metric(std::string_view name) {
  for (auto kind : {MetricKind::exact_match, MetricKind::token_f1, MetricKind::bleu4,
                    MetricKind::rouge1, MetricKind::rouge2, MetricKind::rougeL,
                    MetricKind::cosine_binary, MetricKind::precomputed}) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

TokenSequence tokenize(std::string_view text) {
  TokenSequence tokens;
  const auto cps = decode(text);
  std::size_t i = 0;
  while (i < cps.size()) {
    while (i < cps.size() && is_space(cps[i].value)) ++i;
    std::size_t begin = i;
    while (i < cps.size() && !is_space(cps[i].value)) ++i;
    std::size_t end = i;
    while (begin < end && is_punct(cps[begin].value)) ++begin;
    while (end > begin && is_punct(cps[end - 1].value)) --end;
    if (begin == end) continue;
    std::string token;
    for (std::size_t k = begin; k < end; ++k) {
      const auto& cp = cps[k];
      const bool raw = cp.length == 1 && static_cast<unsigned char>(text[cp.offset]) >= 0x80;
      if (raw) {
        token.push_back(text[cp.offset]);
      } else {
        encode(to_lower(cp.value), token);
      }
    }
    tokens.push_back(std::move(token));
  }
  return tokens;
}

double exact_match(std::string_view candidate, std::string_view reference) {
  return trim(candidate) == trim(reference) ? 1.0 : 0.0;
}

double token_f1(const TokenSequence& candidate, const TokenSequence& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const auto overlap = static_cast<double>(clipped_overlap(ngram_counts(candidate, 1), ngram_counts(reference, 1)));
  const double precision = overlap / static_cast<double>(candidate.size());
  const double recall = overlap / static_cast<double>(reference.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double token_f1(std::string_view candidate, std::string_view reference) {
  return token_f1(tokenize(candidate), tokenize(reference));
}

double bleu_n(const TokenSequence& candidate, const TokenSequence& reference, std::size_t max_order,
              std::span<const double> weights) {
  if (max_order == 0) throw std::invalid_argument("bleu: max order must be at least 1");
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(max_order, 1.0 / static_cast<double>(max_order));
  if (w.size() != max_order) throw std::invalid_argument("bleu: need one weight per n-gram order");
  double wsum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("bleu: weights must be nonnegative");
    wsum += v;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("bleu: weights must sum to 1");

  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t order = 1; order <= max_order; ++order) {
    const auto cand = ngram_counts(candidate, order);
    std::size_t total = 0;
    for (const auto& kv : cand) total += kv.second;
    const std::size_t matched = clipped_overlap(cand, ngram_counts(reference, order));
    if (total == 0 || matched == 0) return 0.0;
    log_sum += w[order - 1] * std::log(static_cast<double>(matched) / static_cast<double>(total));
  }
  const double ratio = static_cast<double>(reference.size()) / static_cast<double>(candidate.size());
  const double brevity = std::min(1.0, std::exp(1.0 - ratio));
  return brevity * std::exp(log_sum);
}

double bleu_n(std::string_view candidate, std::string_view reference, std::size_t max_order,
              std::span<const double> weights) {
  return bleu_n(tokenize(candidate), tokenize(reference), max_order, weights);
}

double rouge_n(const TokenSequence& candidate, const TokenSequence& reference, std::size_t order) {
  if (order == 0) throw std::invalid_argument("rouge_n: order must be at least 1");
  const auto ref = ngram_counts(reference, order);
  std::size_t total = 0;
  for (const auto& kv : ref) total += kv.second;
  if (total == 0) return 0.0;
  return static_cast<double>(clipped_overlap(ngram_counts(candidate, order), ref)) /
         static_cast<double>(total);
}

double rouge_n(std::string_view candidate, std::string_view reference, std::size_t order) {
  return rouge_n(tokenize(candidate), tokenize(reference), order);
}

std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const TokenSequence& candidate, const TokenSequence& reference) {
  const std::size_t lcs = lcs_length(candidate, reference);
  if (lcs == 0) return 0.0;
  const double precision = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  const double recall = static_cast<double>(lcs) / static_cast<double>(reference.size());
  return 2.0 * precision * recall / (precision + recall);
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l(tokenize(candidate), tokenize(reference));
}

double cosine_binary(std::span<const std::uint8_t> x, std::span<const std::uint8_t> y) {
  if (x.size() != y.size()) throw std::invalid_argument("cosine_binary: dimension mismatch");
  std::size_t dot = 0, nx = 0, ny = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool a = x[i] != 0, b = y[i] != 0;
    dot += a && b;
    nx += a;
    ny += b;
  }
  if (nx == 0 || ny == 0) return 0.0;
  return static_cast<double>(dot) / std::sqrt(static_cast<double>(nx) * static_cast<double>(ny));
}

std::vector<std::uint8_t> parse_bits(std::string_view text) {
  std::vector<std::uint8_t> bits;
  for (char c : text) {
    if (c == '0' || c == '1') {
      bits.push_back(static_cast<std::uint8_t>(c - '0'));
    } else if (c != ' ' && c != '\t' && c != '\n' && c != '\r' && c != ',') {
      throw std::invalid_argument("cosine_binary: expected a string of 0/1 characters");
    }
  }
  return bits;
}

double score(MetricKind kind, std::string_view candidate, std::string_view reference) {
  switch (kind) {
    case MetricKind::exact_match: return exact_match(candidate, reference);
    case MetricKind::token_f1: return token_f1(candidate, reference);
    case MetricKind::bleu4: return bleu_n(candidate, reference, 4);
    case MetricKind::rouge1: return rouge_n(candidate, reference, 1);
    case MetricKind::rouge2: return rouge_n(candidate, reference, 2);
    case MetricKind::rougeL: return rouge_l(candidate, reference);
    case MetricKind::cosine_binary: return cosine_binary(parse_bits(candidate), parse_bits(reference));
    case MetricKind::precomputed: break;
  }
  throw std::invalid_argument("precomputed metric cannot score text");
}

OracleScoreMatrix build_oracle_matrix(const std::vector<std::vector<std::string>>& responses,
                                      const std::vector<std::optional<std::string>>& references,
                                      MetricKind kind) {
  if (kind == MetricKind::precomputed) throw std::invalid_argument("precomputed metric cannot score text");
  if (references.size() != responses.size())
    throw std::invalid_argument("oracle matrix: responses and references differ in length");
  const std::size_t n = responses.size();
  const std::size_t m = n == 0 ? 0 : responses.front().size();
  std::vector<double> out;
  out.reserve(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    if (responses[i].size() != m) throw std::invalid_argument("oracle matrix: ragged responses at query " + std::to_string(i));
    if (!references[i]) throw std::invalid_argument("oracle matrix: missing reference for query " + std::to_string(i));
    for (std::size_t j = 0; j < m; ++j) out.push_back(score(kind, responses[i][j], *references[i]));
  }
  return OracleScoreMatrix(n, m, std::move(out));
}

SimilarityTensor build_similarity_tensor(const std::vector<std::vector<std::string>>& responses,
                                         MetricKind kind, unsigned threads) {
  if (kind == MetricKind::precomputed) throw std::invalid_argument("precomputed metric cannot score text");
  const std::size_t n = responses.size();
  const std::size_t m = n == 0 ? 0 : responses.front().size();
  for (std::size_t i = 0; i < n; ++i)
    if (responses[i].size() != m) throw std::invalid_argument("similarity tensor: ragged responses at query " + std::to_string(i));

  std::vector<double> out(n * m * m, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    double* block = out.data() + i * m * m;
    for (std::size_t j = 0; j < m; ++j) {
      block[j * m + j] = 1.0;
      for (std::size_t k = 0; k < m; ++k) {
        if (k == j) continue;
        block[j * m + k] = score(kind, responses[i][j], responses[i][k]);
      }
    }
  });
  return SimilarityTensor(n, m, std::move(out)).symmetrized();
}

}  // namespace selectllm::metrics
