#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "selectllm/io.hpp"
#include "selectllm/random.hpp"

using namespace selectllm;
using namespace selectllm::io;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("selectllm-io-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void put(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

std::string get(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void minimal_bundle(const fs::path& dir) {
  put(dir / "manifest.json",
      R"({"name":"tiny","n":2,"m":2,"models":["a","b"],"metric":"precomputed","precomputed":true})");
  put(dir / "oracle.csv", "a,b\n1,0\n0.25,0.5\n");
  put(dir / "similarities.jsonl",
      "{\"query\":1,\"matrix\":[[1,0.4],[0.2,1]]}\n{\"query\":0,\"matrix\":[[1,0.5],[0.5,1]]}\n");
}

std::string load_error(const fs::path& dir) {
  try {
    load_bundle(dir);
  } catch (const LoadError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("minimal precomputed bundle") {
  TempDir t;
  minimal_bundle(t.path());
  const auto b = load_bundle(t.path());
  CHECK(b.manifest.name == "tiny");
  CHECK(b.manifest.models == std::vector<std::string>{"a", "b"});
  CHECK(b.similarity.at(0, 0, 1) == 0.5);
  CHECK(b.similarity.at(1, 0, 1) == doctest::Approx(0.3));
  CHECK(b.similarity.at(1, 1, 0) == b.similarity.at(1, 0, 1));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(b.similarity.at(i, j, j) == 1.0);
  REQUIRE(b.oracle.has_value());
  CHECK(b.oracle->at(1, 1) == 0.5);
  CHECK(b.report.asymmetric_pairs == 1);
  CHECK(b.report.max_asymmetry == doctest::Approx(0.2));
  CHECK_FALSE(b.responses.has_value());
}

TEST_CASE("corrupt oracle rows cite the record") {
  TempDir t;
  minimal_bundle(t.path());
  put(t.path() / "oracle.csv", "a,b\n1,0\nnan,0.5\n");
  try {
    load_bundle(t.path());
    FAIL("expected a load error");
  } catch (const LoadError& e) {
    CHECK(e.file() == "oracle.csv");
    CHECK(e.record() == 1u);
    CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
  put(t.path() / "oracle.csv", "a,b\n1,0\n1.5,0.5\n");
  CHECK(load_error(t.path()).find("outside") != std::string::npos);
  put(t.path() / "oracle.csv", "a,b\n1,0\n");
  CHECK(load_error(t.path()).find("rows") != std::string::npos);
  put(t.path() / "oracle.csv", "b,a\n1,0\n0,1\n");
  CHECK(load_error(t.path()).find("header") != std::string::npos);
}

TEST_CASE("manifest and tensor errors") {
  TempDir t;
  minimal_bundle(t.path());
  put(t.path() / "manifest.json", R"({"name":"x","n":2,"m":2,"models":["a","b"],"metric":"bertscore","precomputed":true})");
  CHECK(load_error(t.path()).find("unknown metric") != std::string::npos);
  put(t.path() / "manifest.json", R"({"name":"x","n":2,"m":2,"models":["a","a"],"metric":"precomputed","precomputed":true})");
  CHECK(load_error(t.path()).find("duplicate") != std::string::npos);
  put(t.path() / "manifest.json", R"({"name":"x","n":2,"m":3,"models":["a","b"],"metric":"precomputed","precomputed":true})");
  CHECK_FALSE(load_error(t.path()).empty());
  put(t.path() / "manifest.json", R"({"name":"x","n":2,"m":2,"models":["a","b"],"metric":"precomputed","precomputed":false})");
  CHECK(load_error(t.path()).find("computable") != std::string::npos);

  minimal_bundle(t.path());
  put(t.path() / "similarities.jsonl", "{\"query\":0,\"matrix\":[[1,0.5],[0.5,1]]}\n");
  CHECK(load_error(t.path()).find("no record for query 1") != std::string::npos);
  put(t.path() / "similarities.jsonl",
      "{\"query\":0,\"matrix\":[[1,0.5],[0.5,1]]}\n{\"query\":0,\"matrix\":[[1,0.5],[0.5,1]]}\n");
  CHECK(load_error(t.path()).find("record 1") != std::string::npos);
  put(t.path() / "similarities.jsonl",
      "{\"query\":0,\"matrix\":[[0.7,0.5],[0.5,1]]}\n{\"query\":1,\"matrix\":[[1,0.5],[0.5,1]]}\n");
  CHECK(load_error(t.path()).find("similarities.jsonl") != std::string::npos);
  put(t.path() / "similarities.jsonl", "{\"query\":0,\"matrix\":[[1,0.5]]}\n{\"query\":1,\"matrix\":[[1,0.5],[0.5,1]]}\n");
  CHECK(load_error(t.path()).find("record 0") != std::string::npos);

  fs::remove(t.path() / "oracle.csv");
  minimal_bundle(t.path());
  fs::remove(t.path() / "similarities.jsonl");
  CHECK(load_error(t.path()).find("missing") != std::string::npos);
  CHECK_FALSE(load_error(t.path() / "nope").empty());
}

TEST_CASE("raw token_f1 bundle") {
  TempDir t;
  put(t.path() / "manifest.json", R"({"name":"raw","n":2,"m":2,"models":["x","y"],"metric":"token_f1","precomputed":false})");
  put(t.path() / "responses.jsonl",
      "{\"query\":0,\"prompt\":\"Q0\",\"reference\":\"b c\",\"outputs\":[\"a b\",\"b c\"]}\n"
      "{\"query\":1,\"reference\":\"a b c\",\"outputs\":[\"a b c\",\"a\"]}\n");
  const auto b = load_bundle(t.path());
  REQUIRE(b.oracle.has_value());
  CHECK(b.oracle->at(0, 0) == 0.5);
  CHECK(b.oracle->at(0, 1) == 1.0);
  CHECK(b.oracle->at(1, 0) == 1.0);
  CHECK(b.oracle->at(1, 1) == doctest::Approx(0.5));
  CHECK(b.similarity.at(0, 0, 1) == 0.5);
  CHECK(b.similarity.at(1, 0, 1) == doctest::Approx(0.5));
  CHECK(b.similarity.at(0, 1, 1) == 1.0);
  REQUIRE(b.responses.has_value());
  CHECK((*b.responses)[0].prompt == std::string("Q0"));
  CHECK_FALSE((*b.responses)[1].prompt.has_value());

  // Without references the oracle is absent unless oracle.csv is present.
  put(t.path() / "responses.jsonl",
      "{\"query\":0,\"reference\":null,\"outputs\":[\"a b\",\"b c\"]}\n"
      "{\"query\":1,\"reference\":\"a b c\",\"outputs\":[\"a b c\",\"a\"]}\n");
  CHECK_FALSE(load_bundle(t.path()).oracle.has_value());
  put(t.path() / "oracle.csv", "x,y\n0.1,0.2\n0.3,0.4\n");
  CHECK(load_bundle(t.path()).oracle->at(1, 0) == 0.3);

  put(t.path() / "responses.jsonl", "{\"query\":0,\"reference\":null,\"outputs\":[\"a b\"]}\n");
  CHECK(load_error(t.path()).find("record 0") != std::string::npos);
}

TEST_CASE("round trip is bit-exact") {
  TempDir t;
  Rng rng = make_rng(71, {});
  const std::size_t n = 15, m = 4;
  std::vector<double> s(n * m * m), o(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      o[i * m + j] = uniform_real(rng, -1, 1);
      for (std::size_t k = 0; k < m; ++k) {
        const double v = j == k ? 1.0 : uniform_real(rng, -1, 1);
        s[(i * m + j) * m + k] = v;
        if (k < j) s[(i * m + j) * m + k] = s[(i * m + k) * m + j];
      }
    }
  DatasetBundle b{{"rt", n, m, {"m0", "m1", "m2", "m3"}, metrics::MetricKind::precomputed, true},
                  SimilarityTensor(n, m, s), OracleScoreMatrix(n, m, o), std::nullopt, {}};
  write_bundle(b, t.path() / "b");
  const auto back = load_bundle(t.path() / "b");
  for (std::size_t i = 0; i < n * m * m; ++i) CHECK(back.similarity.entries()[i] == s[i]);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) CHECK(back.oracle->at(i, j) == o[i * m + j]);
  write_bundle(back, t.path() / "c");
  for (const char* f : {"manifest.json", "oracle.csv", "similarities.jsonl"})
    CHECK(get(t.path() / "b" / f) == get(t.path() / "c" / f));

  b.manifest.models[1] = "bad,name";
  CHECK_THROWS_AS(write_bundle(b, t.path() / "d"), std::invalid_argument);
  b.oracle.reset();
  CHECK_THROWS_AS(write_bundle(b, t.path() / "d"), std::invalid_argument);
}

TEST_CASE("corruption fuzz") {
  TempDir t;
  const auto planted = make_planted_bundle(PlantedConfig{8, 3, 8, 0.5, {}, 5});
  write_bundle(planted, t.path() / "src");
  const char* files[] = {"manifest.json", "oracle.csv", "similarities.jsonl", "responses.jsonl"};
  Rng rng = make_rng(72, {});
  std::size_t rejected = 0;
  for (int c = 0; c < 400; ++c) {
    const fs::path dir = t.path() / "f";
    fs::remove_all(dir);
    fs::copy(t.path() / "src", dir);
    const char* f = files[uniform_below(rng, 4)];
    std::string text = get(dir / f);
    const auto pos = uniform_below(rng, text.size());
    switch (uniform_below(rng, 4)) {
      case 0: text.resize(pos); break;
      case 1: text[pos] = static_cast<char>(uniform_below(rng, 256)); break;
      case 2: text.erase(pos, 1 + uniform_below(rng, 20)); break;
      default: text.insert(pos, std::string(1, "x,.9-e\n{}[]\""[uniform_below(rng, 13)])); break;
    }
    put(dir / f, text);
    try {
      const auto b = load_bundle(dir);
      CHECK(b.similarity.queries() == b.manifest.n);
      CHECK_NOTHROW(b.similarity.validate_ingested());
    } catch (const LoadError& e) {
      ++rejected;
      CHECK_FALSE(e.file().empty());
    } catch (const std::exception& e) {
      FAIL_CHECK("unstructured error: " << e.what());
    }
  }
  CHECK(rejected > 100);
}

TEST_CASE("number formatting") {
  CHECK(format_fixed6(1.0) == "1.000000");
  CHECK(format_fixed6(0.8181818) == "0.818182");
  CHECK(format_fixed6(-1e-9) == "0.000000");
  CHECK(format_fixed6(-0.25) == "-0.250000");
  CHECK(format_shortest(0.1) == "0.1");
  CHECK(std::stod(format_shortest(1.0 / 3)) == 1.0 / 3);
}

TEST_CASE("archive writes are atomic and deterministic") {
  TempDir t;
  const fs::path out = t.path() / "results";
  const FileSet one{{"summary.json", "{}\n"}, {"curves/random.csv", "budget\n1\n"}};
  write_archive(one, out);
  CHECK(get(out / "curves" / "random.csv") == "budget\n1\n");
  const FileSet two{{"summary.json", "{\"x\":1}\n"}};
  write_archive(two, out);
  CHECK(get(out / "summary.json") == "{\"x\":1}\n");
  CHECK_FALSE(fs::exists(out / "curves"));

  const FileSet broken{{"a", "file"}, {"a/b", "cannot nest under a file"}};
  CHECK_THROWS(write_archive(broken, out));
  CHECK(get(out / "summary.json") == "{\"x\":1}\n");
  std::size_t entries = 0;
  for (const auto& e : fs::directory_iterator(t.path())) {
    (void)e;
    ++entries;
  }
  CHECK(entries == 1);

  write_archive(one, t.path() / "again");
  write_archive(one, t.path() / "again2");
  for (const char* f : {"summary.json", "curves/random.csv"}) CHECK(get(t.path() / "again" / f) == get(t.path() / "again2" / f));
  write_archive({}, t.path() / "empty");
  CHECK(fs::is_directory(t.path() / "empty"));
}

TEST_CASE("helm conversion") {
  TempDir t;
  put(t.path() / "h.jsonl",
      "{\"instance_id\":\"q1\",\"model\":\"alpha\",\"prediction\":\"a b\",\"reference\":\"b c\"}\n"
      "{\"instance_id\":\"q1\",\"model\":\"beta\",\"prediction\":\"b c\",\"reference\":\"b c\"}\n"
      "\n"
      "{\"instance_id\":7,\"model\":\"beta\",\"prediction\":\"a\",\"reference\":\"a b c\"}\n"
      "{\"instance_id\":7,\"model\":\"alpha\",\"prediction\":\"a b c\"}\n");
  const auto b = convert_helm(t.path() / "h.jsonl", metrics::MetricKind::token_f1, "helm");
  CHECK(b.manifest.n == 2);
  CHECK(b.manifest.models == std::vector<std::string>{"alpha", "beta"});
  CHECK(b.manifest.precomputed);
  REQUIRE(b.oracle.has_value());
  CHECK(b.oracle->at(0, 0) == 0.5);
  CHECK(b.oracle->at(1, 0) == 1.0);
  CHECK(b.oracle->at(1, 1) == doctest::Approx(0.5));
  write_bundle(b, t.path() / "out");
  const auto back = load_bundle(t.path() / "out");
  CHECK(back.oracle->at(1, 1) == b.oracle->at(1, 1));
  REQUIRE(back.responses.has_value());
  CHECK((*back.responses)[1].outputs[1] == "a");

  put(t.path() / "s.jsonl",
      "{\"instance_id\":1,\"model\":\"a\",\"prediction\":\"x\",\"score\":0.25}\n"
      "{\"instance_id\":1,\"model\":\"b\",\"prediction\":\"y\",\"score\":0.75}\n");
  const auto scored = convert_helm(t.path() / "s.jsonl", metrics::MetricKind::exact_match, "s");
  CHECK(scored.oracle->at(0, 1) == 0.75);

  put(t.path() / "bad.jsonl", "{\"instance_id\":1,\"model\":\"a\",\"prediction\":\"x\",\"reference\":\"x\"}\n"
                              "{\"instance_id\":2,\"model\":\"b\",\"prediction\":\"y\",\"reference\":\"x\"}\n");
  CHECK_THROWS_AS(convert_helm(t.path() / "bad.jsonl", metrics::MetricKind::exact_match, "b"), LoadError);
  put(t.path() / "dup.jsonl", "{\"instance_id\":1,\"model\":\"a\",\"prediction\":\"x\",\"reference\":\"x\"}\n"
                              "{\"instance_id\":1,\"model\":\"a\",\"prediction\":\"y\",\"reference\":\"x\"}\n");
  CHECK_THROWS_AS(convert_helm(t.path() / "dup.jsonl", metrics::MetricKind::exact_match, "b"), LoadError);
  put(t.path() / "ref.jsonl", "{\"instance_id\":1,\"model\":\"a\",\"prediction\":\"x\",\"reference\":\"x\"}\n"
                              "{\"instance_id\":1,\"model\":\"b\",\"prediction\":\"y\",\"reference\":\"z\"}\n");
  CHECK_THROWS_AS(convert_helm(t.path() / "ref.jsonl", metrics::MetricKind::exact_match, "b"), LoadError);
  CHECK_THROWS_AS(convert_helm(t.path() / "h.jsonl", metrics::MetricKind::precomputed, "b"), std::invalid_argument);
}

TEST_CASE("planted bundle") {
  const PlantedConfig cfg{60, 4, 12, 0.5, {}, 9};
  const auto a = make_planted_bundle(cfg);
  const auto b = make_planted_bundle(cfg);
  CHECK(a.similarity.entries().size() == b.similarity.entries().size());
  CHECK(std::equal(a.similarity.entries().begin(), a.similarity.entries().end(), b.similarity.entries().begin()));
  CHECK(a.manifest.name == "planted-9");
  CHECK(a.manifest.models[3] == "model-3");
  REQUIRE(a.oracle.has_value());
  std::vector<double> mean(4, 0.0);
  for (std::size_t i = 0; i < 60; ++i)
    for (std::size_t j = 0; j < 4; ++j) mean[j] += a.oracle->at(i, j) / 60;
  CHECK(mean[0] > mean[3]);
  CHECK_NOTHROW(a.similarity.validate_ingested());

  TempDir t;
  write_bundle(a, t.path() / "p");
  const auto back = load_bundle(t.path() / "p");
  CHECK(back.oracle->at(5, 2) == a.oracle->at(5, 2));

  const auto all_easy = make_planted_bundle(PlantedConfig{10, 3, 8, 1.0, {}, 1});
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(all_easy.oracle->at(i, j) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(make_planted_bundle(PlantedConfig{10, 3, 8, 1.5, {}, 1}), std::invalid_argument);
  CHECK_THROWS_AS(make_planted_bundle(PlantedConfig{10, 3, 8, 0.5, {0.5}, 1}), std::invalid_argument);
}
