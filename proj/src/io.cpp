#include "selectllm/io.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "selectllm/random.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace selectllm::io {

namespace {

std::string describe(const std::string& file, std::optional<std::size_t> record, const std::string& message) {
  std::string s = file;
  if (record) s += ": record " + std::to_string(*record);
  return s + ": " + message;
}

std::string read_file(const fs::path& path, const std::string& name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(name, std::nullopt, "missing or unreadable file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    pos = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t c = line.find(',', pos);
    out.push_back(line.substr(pos, c == std::string::npos ? std::string::npos : c - pos));
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::size_t require_count(const json& j, const char* key, const std::string& file) {
  if (!j.contains(key) || !j[key].is_number_unsigned())
    throw LoadError(file, std::nullopt, std::string("field '") + key + "' must be a non-negative integer");
  return j[key].get<std::size_t>();
}

Manifest parse_manifest(const fs::path& dir) {
  const std::string file = "manifest.json";
  json j;
  try {
    j = json::parse(read_file(dir / file, file));
  } catch (const json::exception& e) {
    throw LoadError(file, std::nullopt, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw LoadError(file, std::nullopt, "expected a JSON object");
  Manifest m;
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw LoadError(file, std::nullopt, "field 'name' must be a string");
    m.name = j["name"].get<std::string>();
  }
  m.n = require_count(j, "n", file);
  m.m = require_count(j, "m", file);
  if (m.n == 0 || m.m == 0) throw LoadError(file, std::nullopt, "n and m must be positive");
  if (!j.contains("models") || !j["models"].is_array())
    throw LoadError(file, std::nullopt, "field 'models' must be an array of strings");
  for (const auto& name : j["models"]) {
    if (!name.is_string()) throw LoadError(file, std::nullopt, "model names must be strings");
    m.models.push_back(name.get<std::string>());
  }
  if (m.models.size() != m.m)
    throw LoadError(file, std::nullopt,
                    "models lists " + std::to_string(m.models.size()) + " names but m = " + std::to_string(m.m));
  {
    auto sorted = m.models;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw LoadError(file, std::nullopt, "duplicate model name");
  }
  if (!j.contains("metric") || !j["metric"].is_string())
    throw LoadError(file, std::nullopt, "field 'metric' must be a string");
  const auto metric = metrics::parse_metric(j["metric"].get<std::string>());
  if (!metric) throw LoadError(file, std::nullopt, "unknown metric '" + j["metric"].get<std::string>() + "'");
  m.metric = *metric;
  if (!j.contains("precomputed") || !j["precomputed"].is_boolean())
    throw LoadError(file, std::nullopt, "field 'precomputed' must be a boolean");
  m.precomputed = j["precomputed"].get<bool>();
  if (!m.precomputed && m.metric == metrics::MetricKind::precomputed)
    throw LoadError(file, std::nullopt, "a bundle without precomputed tensors needs a computable metric");
  return m;
}

std::vector<ResponseRecord> parse_responses(const fs::path& path, const Manifest& man) {
  const std::string file = "responses.jsonl";
  const auto lines = split_lines(read_file(path, file));
  std::vector<std::optional<ResponseRecord>> slots(man.n);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    json j;
    try {
      j = json::parse(lines[li]);
    } catch (const json::exception& e) {
      throw LoadError(file, li, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("query") || !j["query"].is_number_unsigned())
      throw LoadError(file, li, "expected an object with a non-negative integer 'query'");
    const std::size_t q = j["query"].get<std::size_t>();
    if (q >= man.n) throw LoadError(file, li, "query index " + std::to_string(q) + " out of range");
    if (slots[q]) throw LoadError(file, li, "duplicate query index " + std::to_string(q));
    ResponseRecord rec;
    if (j.contains("prompt") && !j["prompt"].is_null()) {
      if (!j["prompt"].is_string()) throw LoadError(file, li, "'prompt' must be a string");
      rec.prompt = j["prompt"].get<std::string>();
    }
    if (j.contains("reference") && !j["reference"].is_null()) {
      if (!j["reference"].is_string()) throw LoadError(file, li, "'reference' must be a string or null");
      rec.reference = j["reference"].get<std::string>();
    }
    if (!j.contains("outputs") || !j["outputs"].is_array() || j["outputs"].size() != man.m)
      throw LoadError(file, li, "'outputs' must be an array of " + std::to_string(man.m) + " strings");
    for (const auto& o : j["outputs"]) {
      if (!o.is_string()) throw LoadError(file, li, "outputs must be strings");
      rec.outputs.push_back(o.get<std::string>());
    }
    slots[q] = std::move(rec);
  }
  std::vector<ResponseRecord> out;
  for (std::size_t q = 0; q < man.n; ++q) {
    if (!slots[q]) throw LoadError(file, std::nullopt, "no record for query " + std::to_string(q));
    out.push_back(std::move(*slots[q]));
  }
  return out;
}

SimilarityTensor parse_similarities(const fs::path& path, const Manifest& man) {
  const std::string file = "similarities.jsonl";
  const auto lines = split_lines(read_file(path, file));
  const std::size_t m = man.m;
  std::vector<double> entries(man.n * m * m, 0.0);
  std::vector<bool> seen(man.n, false);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    json j;
    try {
      j = json::parse(lines[li]);
    } catch (const json::exception& e) {
      throw LoadError(file, li, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("query") || !j["query"].is_number_unsigned())
      throw LoadError(file, li, "expected an object with a non-negative integer 'query'");
    const std::size_t q = j["query"].get<std::size_t>();
    if (q >= man.n) throw LoadError(file, li, "query index " + std::to_string(q) + " out of range");
    if (seen[q]) throw LoadError(file, li, "duplicate query index " + std::to_string(q));
    seen[q] = true;
    const auto& mat = j.contains("matrix") ? j["matrix"] : json();
    if (!mat.is_array() || mat.size() != m) throw LoadError(file, li, "'matrix' must be " + std::to_string(m) + " x " + std::to_string(m));
    for (std::size_t a = 0; a < m; ++a) {
      if (!mat[a].is_array() || mat[a].size() != m)
        throw LoadError(file, li, "'matrix' must be " + std::to_string(m) + " x " + std::to_string(m));
      for (std::size_t b = 0; b < m; ++b) {
        if (!mat[a][b].is_number()) throw LoadError(file, li, "matrix entries must be numbers");
        const double v = mat[a][b].get<double>();
        if (!std::isfinite(v)) throw LoadError(file, li, "non-finite matrix entry");
        entries[(q * m + a) * m + b] = v;
      }
    }
  }
  for (std::size_t q = 0; q < man.n; ++q)
    if (!seen[q]) throw LoadError(file, std::nullopt, "no record for query " + std::to_string(q));
  return SimilarityTensor(man.n, m, std::move(entries));
}

OracleScoreMatrix parse_oracle(const fs::path& path, const Manifest& man) {
  const std::string file = "oracle.csv";
  const auto lines = split_lines(read_file(path, file));
  if (lines.empty()) throw LoadError(file, std::nullopt, "empty file");
  if (split_csv(lines[0]) != man.models) throw LoadError(file, std::nullopt, "header does not match manifest models");
  if (lines.size() - 1 != man.n)
    throw LoadError(file, std::nullopt,
                    std::to_string(lines.size() - 1) + " data rows but n = " + std::to_string(man.n));
  std::vector<double> entries;
  entries.reserve(man.n * man.m);
  for (std::size_t r = 0; r < man.n; ++r) {
    const auto fields = split_csv(lines[r + 1]);
    if (fields.size() != man.m)
      throw LoadError(file, r, std::to_string(fields.size()) + " fields, expected " + std::to_string(man.m));
    for (const auto& f : fields) {
      const auto v = parse_double(f);
      if (!v) throw LoadError(file, r, "malformed number '" + f + "'");
      if (!std::isfinite(*v)) throw LoadError(file, r, "non-finite score");
      if (*v < -1.0 || *v > 1.0) throw LoadError(file, r, "score outside [-1, 1]");
      entries.push_back(*v);
    }
  }
  return OracleScoreMatrix(man.n, man.m, std::move(entries));
}

LoadReport asymmetry(const SimilarityTensor& S) {
  LoadReport rep;
  for (std::size_t i = 0; i < S.queries(); ++i)
    for (std::size_t j = 0; j < S.models(); ++j)
      for (std::size_t k = j + 1; k < S.models(); ++k) {
        const double d = std::abs(S.at(i, j, k) - S.at(i, k, j));
        if (d > 0) {
          ++rep.asymmetric_pairs;
          rep.max_asymmetry = std::max(rep.max_asymmetry, d);
        }
      }
  return rep;
}

std::vector<std::vector<std::string>> outputs_of(const std::vector<ResponseRecord>& responses) {
  std::vector<std::vector<std::string>> out;
  out.reserve(responses.size());
  for (const auto& r : responses) out.push_back(r.outputs);
  return out;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  out.close();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

LoadError::LoadError(std::string file, std::optional<std::size_t> record, const std::string& message)
    : std::runtime_error(describe(file, record, message)), file_(std::move(file)), record_(record) {}

DatasetBundle load_bundle(const fs::path& dir, unsigned threads) {
  if (!fs::is_directory(dir)) throw LoadError(dir.string(), std::nullopt, "bundle directory not found");
  DatasetBundle b;
  b.manifest = parse_manifest(dir);
  const Manifest& man = b.manifest;

  if (fs::exists(dir / "responses.jsonl")) b.responses = parse_responses(dir / "responses.jsonl", man);

  SimilarityTensor raw;
  if (man.precomputed) {
    raw = parse_similarities(dir / "similarities.jsonl", man);
    b.oracle = parse_oracle(dir / "oracle.csv", man);
  } else {
    if (!b.responses) throw LoadError("responses.jsonl", std::nullopt, "missing or unreadable file");
    try {
      raw = metrics::build_similarity_tensor(outputs_of(*b.responses), man.metric, threads);
    } catch (const std::exception& e) {
      throw LoadError("responses.jsonl", std::nullopt, std::string("cannot score outputs: ") + e.what());
    }
    const bool all_refs = std::all_of(b.responses->begin(), b.responses->end(),
                                      [](const ResponseRecord& r) { return r.reference.has_value(); });
    if (all_refs) {
      std::vector<std::optional<std::string>> refs;
      for (const auto& r : *b.responses) refs.push_back(r.reference);
      try {
        b.oracle = metrics::build_oracle_matrix(outputs_of(*b.responses), refs, man.metric);
      } catch (const std::exception& e) {
        throw LoadError("responses.jsonl", std::nullopt, std::string("cannot score references: ") + e.what());
      }
    } else if (fs::exists(dir / "oracle.csv")) {
      b.oracle = parse_oracle(dir / "oracle.csv", man);
    }
  }

  b.report = asymmetry(raw);
  b.similarity = raw.symmetrized();
  try {
    b.similarity.validate_ingested();
  } catch (const std::invalid_argument& e) {
    throw LoadError(man.precomputed ? "similarities.jsonl" : "responses.jsonl", std::nullopt, e.what());
  }
  return b;
}

std::string format_shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_fixed6(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
  std::string s(buf, res.ptr);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

void write_bundle(const DatasetBundle& b, const fs::path& dir) {
  const Manifest& man = b.manifest;
  if (!b.oracle) throw std::invalid_argument("write bundle: oracle matrix required");
  if (b.similarity.queries() != man.n || b.similarity.models() != man.m || b.oracle->queries() != man.n ||
      b.oracle->models() != man.m || man.models.size() != man.m)
    throw std::invalid_argument("write bundle: shapes disagree with the manifest");
  for (const auto& name : man.models)
    if (name.find_first_of(",\r\n") != std::string::npos)
      throw std::invalid_argument("write bundle: model names may not contain commas or newlines");
  fs::create_directories(dir);

  ordered_json mj;
  mj["name"] = man.name;
  mj["n"] = man.n;
  mj["m"] = man.m;
  mj["models"] = man.models;
  mj["metric"] = std::string(metrics::to_string(man.metric));
  mj["precomputed"] = true;
  write_text(dir / "manifest.json", mj.dump(2) + "\n");

  std::string oracle;
  for (std::size_t j = 0; j < man.m; ++j) oracle += (j ? "," : "") + man.models[j];
  oracle += "\n";
  for (std::size_t i = 0; i < man.n; ++i) {
    for (std::size_t j = 0; j < man.m; ++j) oracle += (j ? "," : "") + format_shortest(b.oracle->at(i, j));
    oracle += "\n";
  }
  write_text(dir / "oracle.csv", oracle);

  std::string sims;
  for (std::size_t i = 0; i < man.n; ++i) {
    sims += "{\"query\":" + std::to_string(i) + ",\"matrix\":[";
    for (std::size_t j = 0; j < man.m; ++j) {
      sims += j ? ",[" : "[";
      for (std::size_t k = 0; k < man.m; ++k) sims += (k ? "," : "") + format_shortest(b.similarity.at(i, j, k));
      sims += "]";
    }
    sims += "]}\n";
  }
  write_text(dir / "similarities.jsonl", sims);

  if (b.responses) {
    std::string lines;
    for (std::size_t i = 0; i < b.responses->size(); ++i) {
      const auto& r = (*b.responses)[i];
      ordered_json rj;
      rj["query"] = i;
      if (r.prompt) rj["prompt"] = *r.prompt;
      rj["reference"] = r.reference ? json(*r.reference) : json(nullptr);
      rj["outputs"] = r.outputs;
      lines += rj.dump() + "\n";
    }
    write_text(dir / "responses.jsonl", lines);
  } else {
    fs::remove(dir / "responses.jsonl");
  }
}

void write_archive(const FileSet& files, const fs::path& out_dir) {
  static std::atomic<unsigned> counter{0};
  const fs::path target = fs::absolute(out_dir).lexically_normal();
  const fs::path parent = target.parent_path();
  fs::create_directories(parent);
  const std::string tag = std::to_string(::getpid()) + "-" + std::to_string(counter++);
  const fs::path tmp = parent / ("." + target.filename().string() + ".tmp-" + tag);
  const fs::path old = parent / ("." + target.filename().string() + ".old-" + tag);
  try {
    fs::create_directories(tmp);
    for (const auto& [name, content] : files) {
      const fs::path p = tmp / name;
      fs::create_directories(p.parent_path());
      write_text(p, content);
    }
    if (fs::exists(target)) {
      if (!fs::is_directory(target)) throw std::runtime_error(target.string() + " exists and is not a directory");
      fs::rename(target, old);
    }
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    if (fs::exists(old, ec) && !fs::exists(target, ec)) fs::rename(old, target, ec);
    throw;
  }
  std::error_code ec;
  fs::remove_all(old, ec);
}

DatasetBundle convert_helm(const fs::path& jsonl, metrics::MetricKind metric, std::string name, unsigned threads) {
  if (metric == metrics::MetricKind::precomputed)
    throw std::invalid_argument("convert: a computable metric is needed for model-model similarities");
  const std::string file = jsonl.filename().string();
  const auto lines = split_lines(read_file(jsonl, file));

  struct Cell {
    std::string prediction;
    std::optional<double> score;
  };
  std::map<std::string, std::size_t> query_index, model_index;
  std::vector<std::string> models;
  std::vector<std::optional<std::string>> references;
  std::map<std::pair<std::size_t, std::size_t>, Cell> cells;

  for (std::size_t li = 0; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    json j;
    try {
      j = json::parse(lines[li]);
    } catch (const json::exception& e) {
      throw LoadError(file, li, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("instance_id") || !j.contains("model") || !j["model"].is_string() ||
        !j.contains("prediction") || !j["prediction"].is_string())
      throw LoadError(file, li, "expected instance_id, model and prediction");
    const auto& id = j["instance_id"];
    const std::string key = id.is_string() ? id.get<std::string>() : id.dump();
    const auto [qit, qnew] = query_index.emplace(key, query_index.size());
    if (qnew) references.emplace_back();
    const auto [mit, mnew] = model_index.emplace(j["model"].get<std::string>(), models.size());
    if (mnew) models.push_back(j["model"].get<std::string>());
    if (j.contains("reference") && !j["reference"].is_null()) {
      if (!j["reference"].is_string()) throw LoadError(file, li, "'reference' must be a string");
      auto& ref = references[qit->second];
      const auto text = j["reference"].get<std::string>();
      if (ref && *ref != text) throw LoadError(file, li, "conflicting references for instance " + key);
      ref = text;
    }
    Cell cell{j["prediction"].get<std::string>(), std::nullopt};
    if (j.contains("score") && !j["score"].is_null()) {
      if (!j["score"].is_number()) throw LoadError(file, li, "'score' must be a number");
      cell.score = j["score"].get<double>();
    }
    if (!cells.emplace(std::pair{qit->second, mit->second}, std::move(cell)).second)
      throw LoadError(file, li, "duplicate record for instance " + key);
  }
  const std::size_t n = references.size(), m = models.size();
  if (n == 0) throw LoadError(file, std::nullopt, "no records");
  if (cells.size() != n * m) throw LoadError(file, std::nullopt, "every instance needs a prediction from every model");

  std::vector<std::vector<std::string>> outputs(n, std::vector<std::string>(m));
  bool all_scored = true;
  for (const auto& [key, cell] : cells) {
    outputs[key.first][key.second] = cell.prediction;
    all_scored = all_scored && cell.score.has_value();
  }

  DatasetBundle b;
  b.manifest = {std::move(name), n, m, models, metric, true};
  b.similarity = metrics::build_similarity_tensor(outputs, metric, threads);
  if (all_scored) {
    std::vector<double> entries(n * m);
    for (const auto& [key, cell] : cells) entries[key.first * m + key.second] = *cell.score;
    try {
      b.oracle = OracleScoreMatrix(n, m, std::move(entries));
    } catch (const std::invalid_argument& e) {
      throw LoadError(file, std::nullopt, std::string("scores: ") + e.what());
    }
  } else {
    for (std::size_t q = 0; q < n; ++q)
      if (!references[q]) throw LoadError(file, std::nullopt, "instance without reference or scores");
    b.oracle = metrics::build_oracle_matrix(outputs, references, metric);
  }
  std::vector<ResponseRecord> responses(n);
  for (std::size_t q = 0; q < n; ++q) responses[q] = {std::nullopt, references[q], outputs[q]};
  b.responses = std::move(responses);
  return b;
}

DatasetBundle make_planted_bundle(const PlantedConfig& cfg, unsigned threads) {
  if (cfg.n == 0 || cfg.m == 0) throw std::invalid_argument("planted: n and m must be positive");
  if (cfg.bits < 2 || cfg.bits > 30) throw std::invalid_argument("planted: bits must be in [2, 30]");
  if (!(cfg.easy_fraction >= 0.0 && cfg.easy_fraction <= 1.0))
    throw std::invalid_argument("planted: easy fraction must be in [0, 1]");
  std::vector<double> acc = cfg.accuracy;
  if (acc.empty()) {
    for (std::size_t j = 0; j < cfg.m; ++j)
      acc.push_back(cfg.m == 1 ? 0.85 : 0.85 - 0.5 * static_cast<double>(j) / static_cast<double>(cfg.m - 1));
  }
  if (acc.size() != cfg.m) throw std::invalid_argument("planted: one accuracy per model");

  Rng rng = make_rng(cfg.seed, {0x9147u});
  const std::uint64_t span = (std::uint64_t{1} << cfg.bits) - 1;
  auto to_bits = [&](std::uint64_t v) {
    std::string s(cfg.bits, '0');
    for (unsigned b = 0; b < cfg.bits; ++b)
      if ((v >> b) & 1u) s[b] = '1';
    return s;
  };

  std::vector<ResponseRecord> responses(cfg.n);
  for (auto& rec : responses) {
    const std::uint64_t ref = 1 + uniform_below(rng, span);
    const bool easy = uniform_unit(rng) < cfg.easy_fraction;
    rec.reference = to_bits(ref);
    for (std::size_t j = 0; j < cfg.m; ++j) {
      std::uint64_t out = ref;
      if (!easy && !(uniform_unit(rng) < acc[j])) {
        do out = 1 + uniform_below(rng, span);
        while (out == ref);
      }
      rec.outputs.push_back(to_bits(out));
    }
  }

  DatasetBundle b;
  std::vector<std::string> models;
  for (std::size_t j = 0; j < cfg.m; ++j) models.push_back("model-" + std::to_string(j));
  b.manifest = {"planted-" + std::to_string(cfg.seed), cfg.n, cfg.m, models, metrics::MetricKind::cosine_binary,
                false};
  const auto outputs = outputs_of(responses);
  std::vector<std::optional<std::string>> refs;
  for (const auto& r : responses) refs.push_back(r.reference);
  b.similarity = metrics::build_similarity_tensor(outputs, metrics::MetricKind::cosine_binary, threads);
  b.oracle = metrics::build_oracle_matrix(outputs, refs, metrics::MetricKind::cosine_binary);
  b.responses = std::move(responses);
  return b;
}

}  // namespace selectllm::io
