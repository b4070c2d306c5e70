#pragma once

// Dataset bundles on disk and results archives.
//
// Bundle directory:
//   manifest.json        {name, n, m, models, metric, precomputed}
//   oracle.csv           header = model names, n rows of m decimals
//   similarities.jsonl   {"query": i, "matrix": [[m x m]]} per line
//   responses.jsonl      {"query": i, "prompt"?: string, "reference": string|null, "outputs": [m strings]}
//
// Precomputed bundles ship the two tensor files; the others ship responses
// and get their tensors from the manifest metric.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "selectllm/core.hpp"
#include "selectllm/metrics.hpp"

namespace selectllm::io {

/// Structured bundle error: the offending file and, when known, the 0-based
/// record (data row or line) within it.
class LoadError : public std::runtime_error {
 public:
  LoadError(std::string file, std::optional<std::size_t> record, const std::string& message);
  const std::string& file() const noexcept { return file_; }
  std::optional<std::size_t> record() const noexcept { return record_; }

 private:
  std::string file_;
  std::optional<std::size_t> record_;
};

struct Manifest {
  std::string name;
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<std::string> models;
  metrics::MetricKind metric = metrics::MetricKind::precomputed;
  bool precomputed = true;
};

struct ResponseRecord {
  std::optional<std::string> prompt;  // optional "prompt" field, shown to annotators
  std::optional<std::string> reference;
  std::vector<std::string> outputs;
};

struct LoadReport {
  std::size_t asymmetric_pairs = 0;  // off-diagonal pairs averaged by symmetrization
  double max_asymmetry = 0.0;
};

struct DatasetBundle {
  Manifest manifest;
  SimilarityTensor similarity;
  std::optional<OracleScoreMatrix> oracle;  // absent when references are missing and no oracle.csv
  std::optional<std::vector<ResponseRecord>> responses;
  LoadReport report;
};

DatasetBundle load_bundle(const std::filesystem::path& dir, unsigned threads = 1);

/// Writes a precomputed bundle (responses too, when present). Decimals use
/// the shortest round-trip form, so loading reproduces the tensors bit-exactly.
void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);

/// Shortest decimal that parses back to the same double.
std::string format_shortest(double v);
/// Fixed 6-decimal form used in results CSVs.
std::string format_fixed6(double v);

/// A results archive: relative file names and their contents.
using FileSet = std::vector<std::pair<std::string, std::string>>;

/// Writes the files into a temporary sibling directory and renames it onto
/// `out_dir`, replacing any previous archive. Nothing is left behind on failure.
void write_archive(const FileSet& files, const std::filesystem::path& out_dir);

/// Converts HELM-style per-instance JSONL ({instance_id, model, prediction,
/// reference, score?}) to a precomputed bundle. Queries and models are numbered
/// in order of first appearance. Oracle scores come from `score` when every
/// record has one, otherwise from the metric against the reference.
DatasetBundle convert_helm(const std::filesystem::path& jsonl, metrics::MetricKind metric, std::string name,
                           unsigned threads = 1);

struct PlantedConfig {
  std::size_t n = 120;
  std::size_t m = 4;
  unsigned bits = 16;
  double easy_fraction = 0.5;        // queries every model answers correctly
  std::vector<double> accuracy{};    // per-model accuracy on hard queries; empty = linear 0.85 .. 0.35
  std::uint64_t seed = 0;
};

/// Raw-response bundle over bit-string answers scored with cosine_binary.
/// Easy queries: all models return the reference. Hard queries: model j
/// returns the reference with probability accuracy[j], else a random other vector.
DatasetBundle make_planted_bundle(const PlantedConfig& config, unsigned threads = 1);

}  // namespace selectllm::io
