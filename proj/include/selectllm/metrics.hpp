#pragma once

// Reference-based text similarity metrics and the builders that turn raw
// response corpora into oracle matrices and similarity tensors.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selectllm/core.hpp"

namespace selectllm::metrics {

using TokenSequence = std::vector<std::string>;

enum class MetricKind { exact_match, token_f1, bleu4, rouge1, rouge2, rougeL, cosine_binary, precomputed };

std::string_view to_string(MetricKind kind);
/// Accepts the names printed by to_string.
std::optional<MetricKind> parse_metric(std::string_view name);

/// Lowercase, split on Unicode whitespace, strip leading/trailing punctuation
/// from each token, drop tokens that become empty. Lowercasing covers ASCII,
/// Latin-1, Greek and Cyrillic letters.
TokenSequence tokenize(std::string_view text);

/// 1 iff identical after trimming surrounding whitespace.
double exact_match(std::string_view candidate, std::string_view reference);

double token_f1(std::string_view candidate, std::string_view reference);
double token_f1(const TokenSequence& candidate, const TokenSequence& reference);

/// Sentence-level BLEU without smoothing. `weights` must have max_order
/// nonnegative entries summing to 1; empty means uniform.
double bleu_n(std::string_view candidate, std::string_view reference, std::size_t max_order = 4,
              std::span<const double> weights = {});
double bleu_n(const TokenSequence& candidate, const TokenSequence& reference, std::size_t max_order,
              std::span<const double> weights = {});

/// ROUGE-N recall with clipped counts.
double rouge_n(std::string_view candidate, std::string_view reference, std::size_t order);
double rouge_n(const TokenSequence& candidate, const TokenSequence& reference, std::size_t order);

/// ROUGE-L F-measure over the token LCS.
double rouge_l(std::string_view candidate, std::string_view reference);
double rouge_l(const TokenSequence& candidate, const TokenSequence& reference);

/// Length of the longest common subsequence.
std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b);

/// x.y / (|x| |y|) for 0/1 vectors; 0 if either has zero norm.
double cosine_binary(std::span<const std::uint8_t> x, std::span<const std::uint8_t> y);

/// Parses a string of '0'/'1' characters (whitespace ignored) into a bit vector.
std::vector<std::uint8_t> parse_bits(std::string_view text);

/// Scores one (candidate, reference) pair under a computable metric kind.
double score(MetricKind kind, std::string_view candidate, std::string_view reference);

/// entry (i, j) = metric(responses[i][j], references[i]).
OracleScoreMatrix build_oracle_matrix(const std::vector<std::vector<std::string>>& responses,
                                      const std::vector<std::optional<std::string>>& references,
                                      MetricKind kind);

/// entry (i, j, k) = metric(responses[i][j], responses[i][k]), symmetrized,
/// with the diagonal set to the metric's nominal self-similarity 1.0.
SimilarityTensor build_similarity_tensor(const std::vector<std::vector<std::string>>& responses,
                                         MetricKind kind, unsigned threads = 1);

}  // namespace selectllm::metrics
