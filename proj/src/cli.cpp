#include "selectllm/cli.hpp"

#include <cmath>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "selectllm/baselines.hpp"
#include "selectllm/harness.hpp"
#include "selectllm/io.hpp"
#include "selectllm/parallel.hpp"
#include "selectllm/service.hpp"
#include "selectllm/synthetic.hpp"
#include "selectllm/tuner.hpp"

using json = nlohmann::ordered_json;

namespace selectllm {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t c = text.find(',', pos);
    if (c == std::string::npos) c = text.size();
    std::string item = text.substr(pos, c - pos);
    while (!item.empty() && item.front() == ' ') item.erase(item.begin());
    while (!item.empty() && item.back() == ' ') item.pop_back();
    out.push_back(item);
    pos = c + 1;
  }
  return out;
}

std::vector<double> parse_decimals(const std::string& text, const std::string& flag) {
  try {
    std::vector<double> out;
    for (const auto& item : split_list(text)) {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || !std::isfinite(v)) throw std::invalid_argument(item);
      out.push_back(v);
    }
    return out;
  } catch (const std::exception&) {
    throw UsageError(flag + ": malformed list '" + text + "'");
  }
}

std::vector<baselines::StrategyKind> parse_methods(const std::string& text) {
  if (text == "all") return baselines::all_strategies();
  std::vector<baselines::StrategyKind> out;
  for (const auto& name : split_list(text)) {
    const auto kind = baselines::parse_strategy(name);
    if (!kind) throw UsageError("unknown method '" + name + "'");
    if (std::find(out.begin(), out.end(), *kind) != out.end()) throw UsageError("method listed twice: " + name);
    out.push_back(*kind);
  }
  return out;
}

tuner::TauGrid parse_grid(const std::string& text, const tuner::TauGrid& fallback) {
  if (text.empty()) return fallback;
  try {
    return tuner::TauGrid::parse(text);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--grid: ") + e.what());
  }
}

json optional_count(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }

std::string delta_label(double d) { return io::format_shortest(d); }

json efficiency_json(const harness::EfficiencyReport& e) {
  json j;
  j["select_llm_budget"] = optional_count(e.select_llm_budget);
  json bases = json::object();
  for (const auto& [kind, b] : e.baseline_budgets) bases[std::string(baselines::to_string(kind))] = optional_count(b);
  j["baseline_budgets"] = std::move(bases);
  j["strongest_baseline"] = e.strongest_baseline ? json(std::string(baselines::to_string(*e.strongest_baseline))) : json(nullptr);
  j["strongest_budget"] = optional_count(e.strongest_budget);
  j["reduction"] = e.reduction ? json(*e.reduction) : json(nullptr);
  return j;
}

std::string tau_curves_csv(const std::vector<tuner::TauCurve>& curves, std::optional<double> selected) {
  std::string s = "tau,hits,mean_identification,labels_to_full";
  if (selected) s += ",selected";
  s += "\n";
  for (const auto& c : curves) {
    s += io::format_shortest(c.tau) + "," + std::to_string(c.hits) + "," + io::format_fixed6(c.mean_identification) +
         "," + (c.labels_to_full ? std::to_string(*c.labels_to_full) : std::string());
    if (selected) s += c.tau == *selected ? ",1" : ",0";
    s += "\n";
  }
  return s;
}

std::string tau_identification_csv(const std::vector<tuner::TauCurve>& curves) {
  std::string s = "tau,budget,identification\n";
  for (const auto& c : curves)
    for (std::size_t t = 0; t < c.identification.size(); ++t)
      s += io::format_shortest(c.tau) + "," + std::to_string(t + 1) + "," + io::format_fixed6(c.identification[t]) + "\n";
  return s;
}

struct Common {
  std::string bundle;
  std::size_t realizations = 1000;
  std::size_t size = 0;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string preset;
  std::string out;
};

harness::RealizationPlan make_plan(const Common& c, std::size_t pool, bool realizations_given) {
  harness::RealizationPlan plan;
  plan.pool_size = pool;
  plan.realization_size = c.size == 0 ? pool : c.size;
  plan.realizations = c.realizations;
  if (c.preset == "desk" && !realizations_given) plan.realizations = 100;
  plan.budget = c.budget;
  plan.seed = c.seed;
  try {
    plan.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return plan;
}

io::DatasetBundle load(const std::string& path, unsigned threads) { return io::load_bundle(path, threads); }

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Active model selection with pairwise-agreement query acquisition"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool needs_bundle) {
    auto* b = sub->add_option("--bundle", common.bundle, "Dataset bundle directory");
    if (needs_bundle) b->required();
    sub->add_option("--seed", common.seed, "Master seed");
    sub->add_option("--threads", common.threads, "Worker threads (default: SELECTLLM_THREADS or all cores)");
  };

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run the realization harness over selection methods");
  add_common(sim, true);
  std::string methods_text = "all", tau_text = "auto", grid_text, deltas_text = "0.001,0.005,0.01";
  std::size_t tune_realizations = 200;
  auto* sim_real = sim->add_option("--realizations", common.realizations, "Realizations (default 1000)");
  sim->add_option("--size", common.size, "Queries per realization (default: whole pool)");
  sim->add_option("--budget", common.budget, "Labels per realization (default: realization size)");
  sim->add_option("--methods", methods_text, "Comma-separated methods or 'all'");
  sim->add_option("--tau", tau_text, "Temperature or 'auto'");
  sim->add_option("--grid", grid_text, "Tau grid for --tau auto");
  sim->add_option("--tune-realizations", tune_realizations, "Realizations used by --tau auto");
  sim->add_option("--deltas", deltas_text, "Near-best tolerances");
  sim->add_option("--preset", common.preset, "'desk' lowers the default realizations to 100")->check(CLI::IsMember({"desk"}));
  sim->add_option("--out", common.out, "Results directory")->required();

  // tune-tau
  auto* tune = app.add_subcommand("tune-tau", "Pick tau without oracle labels");
  add_common(tune, true);
  std::size_t tune_size = 0;
  tune->add_option("--grid", grid_text, "Comma-separated tau grid");
  tune->add_option("--realizations", tune_realizations, "Realizations (default 200)");
  tune->add_option("--size", tune_size, "Queries per realization (default: whole pool)");
  tune->add_option("--out", common.out, "Results directory");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Tau sensitivity of Select-LLM against the oracle");
  add_common(sweep, true);
  auto* sweep_real = sweep->add_option("--realizations", common.realizations, "Realizations (default 1000)");
  sweep->add_option("--size", common.size, "Queries per realization");
  sweep->add_option("--budget", common.budget, "Labels per realization");
  sweep->add_option("--grid", grid_text, "Comma-separated tau grid");
  sweep->add_option("--preset", common.preset, "'desk' lowers the default realizations to 100")->check(CLI::IsMember({"desk"}));
  sweep->add_option("--out", common.out, "Results directory")->required();

  // synthetic
  auto* syn = app.add_subcommand("synthetic", "Rule versus exact mutual information on binary vectors");
  synthetic::ValidationConfig vcfg;
  std::string m_text = "2,5,10,20", maxp_text;
  bool derivations = false;
  syn->add_option("--d", vcfg.d, "Bit-vector dimension");
  syn->add_option("--m", m_text, "Comma-separated model counts");
  syn->add_option("--maxp", maxp_text, "Comma-separated maxP values used for every m");
  syn->add_option("--n-syn", vcfg.n_syn, "Queries per seed");
  syn->add_option("--tau", vcfg.tau, "Temperature");
  syn->add_option("--seeds", vcfg.seeds, "Independent seeds");
  syn->add_option("--scatter-seeds", vcfg.scatter_seeds, "Seeds whose rank pairs go to scatter.csv");
  syn->add_option("--seed", vcfg.seed, "Master seed");
  syn->add_option("--threads", common.threads, "Worker threads");
  syn->add_flag("--derivations", derivations, "Also run the numerical identity checks");
  syn->add_option("--out", common.out, "Results directory");

  // generate
  auto* gen = app.add_subcommand("generate", "Write a planted bit-vector bundle");
  io::PlantedConfig pcfg;
  gen->add_option("--n", pcfg.n, "Queries");
  gen->add_option("--m", pcfg.m, "Models");
  gen->add_option("--bits", pcfg.bits, "Answer bit width");
  gen->add_option("--easy", pcfg.easy_fraction, "Fraction of queries all models answer correctly");
  gen->add_option("--seed", pcfg.seed, "Seed");
  gen->add_option("--out", common.out, "Bundle directory")->required();

  // convert-helm
  auto* conv = app.add_subcommand("convert-helm", "Convert per-instance JSONL to a bundle");
  std::string input, metric_text = "token_f1", name;
  conv->add_option("--input", input, "JSONL file")->required();
  conv->add_option("--metric", metric_text, "Similarity metric");
  conv->add_option("--name", name, "Bundle name");
  conv->add_option("--threads", common.threads, "Worker threads");
  conv->add_option("--out", common.out, "Bundle directory")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "Host interactive annotation sessions over HTTP");
  std::vector<std::string> serve_bundles;
  std::string host = "127.0.0.1", mode_text = "live";
  int port = 8080;
  serve->add_option("--bundle", serve_bundles, "Bundle directory (repeatable)")->required();
  serve->add_option("--host", host, "Interface");
  serve->add_option("--port", port, "Port (0 picks one)");
  serve->add_option("--mode", mode_text, "Default session mode")->check(CLI::IsMember({"live", "replay"}));
  serve->add_option("--threads", common.threads, "Threads for tensor construction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  const unsigned threads = resolve_threads(common.threads);
  try {
    if (sim->parsed()) {
      const auto methods = parse_methods(methods_text);
      const auto deltas = parse_decimals(deltas_text, "--deltas");
      for (double d : deltas)
        if (!(d >= 0.0 && d < 1.0)) throw UsageError("--deltas: values must lie in [0, 1)");
      std::optional<double> literal_tau;
      if (tau_text != "auto") {
        const auto v = parse_decimals(tau_text, "--tau");
        if (v.size() != 1 || !(v[0] > 0.0)) throw UsageError("--tau: expected a positive number or 'auto'");
        literal_tau = v[0];
      }
      const auto grid = parse_grid(grid_text, tuner::TauGrid::search_default());

      const auto bundle = load(common.bundle, threads);
      if (!bundle.oracle) throw std::runtime_error("bundle has no oracle scores (references or oracle.csv)");
      const auto plan = make_plan(common, bundle.manifest.n, sim_real->count() > 0);

      io::FileSet files;
      double tau = 0.0;
      if (literal_tau) {
        tau = *literal_tau;
      } else {
        tuner::TuneConfig tc{tune_realizations, plan.realization_size, plan.seed, threads};
        const auto tuned = tuner::tune_tau(bundle.similarity, grid, tc);
        tau = tuned.tau;
        files.emplace_back("tau_curves.csv", tau_curves_csv(tuned.curves, tau));
      }

      const auto trials = harness::run_trials(bundle.similarity, *bundle.oracle, methods, plan, tau, threads);
      const auto summary = harness::summarize(trials, deltas);

      json config;
      config["command"] = "simulate";
      config["bundle"] = bundle.manifest.name;
      config["n"] = bundle.manifest.n;
      config["m"] = bundle.manifest.m;
      config["models"] = bundle.manifest.models;
      json mnames = json::array();
      for (auto k : methods) mnames.push_back(std::string(baselines::to_string(k)));
      config["methods"] = mnames;
      config["realizations"] = plan.realizations;
      config["realization_size"] = plan.realization_size;
      config["budget"] = plan.effective_budget();
      config["seed"] = plan.seed;
      config["tau"] = tau_text;
      config["grid"] = grid.values();
      config["deltas"] = deltas;
      files.emplace_back("config.json", config.dump(2) + "\n");

      for (const auto& ms : summary.methods) {
        std::string csv = "budget,identification";
        for (double d : deltas) csv += ",near_best_" + delta_label(d);
        csv += ",gap_p95\n";
        for (const auto& p : ms.curve) {
          csv += std::to_string(p.budget) + "," + io::format_fixed6(p.identification);
          for (double v : p.near_best) csv += "," + io::format_fixed6(v);
          csv += "," + io::format_fixed6(p.gap_p95) + "\n";
        }
        files.emplace_back("curves/" + std::string(baselines::to_string(ms.kind)) + ".csv", csv);
      }

      json sj;
      sj["tau"] = tau;
      sj["tau_source"] = literal_tau ? "literal" : "auto";
      sj["budget"] = trials.budget;
      sj["realizations"] = plan.realizations;
      json mj = json::array();
      for (const auto& ms : summary.methods) {
        json e;
        e["method"] = std::string(baselines::to_string(ms.kind));
        e["labels_to_full"] = optional_count(ms.labels_to_full);
        json nb = json::object();
        for (std::size_t d = 0; d < deltas.size(); ++d) nb[delta_label(deltas[d])] = optional_count(ms.near_best_labels[d]);
        e["near_best_labels"] = std::move(nb);
        e["gap_excluded"] = ms.gap_excluded;
        mj.push_back(std::move(e));
      }
      sj["methods"] = std::move(mj);
      json eff;
      eff["best"] = efficiency_json(summary.best_efficiency);
      json near = json::object();
      for (std::size_t d = 0; d < summary.near_best_efficiency.size(); ++d)
        near[delta_label(deltas[d])] = efficiency_json(summary.near_best_efficiency[d]);
      eff["near_best"] = std::move(near);
      sj["efficiency"] = std::move(eff);
      json gt = json::array();
      for (const auto& row : summary.gap_table) {
        json r;
        r["level"] = row.level;
        r["budget"] = optional_count(row.budget);
        json g = json::object();
        for (const auto& [kind, v] : row.gaps) g[std::string(baselines::to_string(kind))] = v;
        r["gaps"] = std::move(g);
        gt.push_back(std::move(r));
      }
      sj["gap_table"] = std::move(gt);
      files.emplace_back("summary.json", sj.dump(2) + "\n");

      io::write_archive(files, common.out);
      out << "tau " << io::format_shortest(tau) << (literal_tau ? "" : " (auto)") << "\n";
      for (const auto& ms : summary.methods)
        out << baselines::to_string(ms.kind) << ": labels to 100% identification = "
            << (ms.labels_to_full ? std::to_string(*ms.labels_to_full) : std::string("not reached")) << "\n";
      if (summary.best_efficiency.reduction)
        out << "reduction vs strongest baseline: " << io::format_fixed6(*summary.best_efficiency.reduction) << "\n";
      return 0;
    }

    if (tune->parsed()) {
      const auto grid = parse_grid(grid_text, tuner::TauGrid::search_default());
      if (tune_realizations == 0) throw UsageError("--realizations must be positive");
      const auto bundle = load(common.bundle, threads);
      if (tune_size > bundle.manifest.n) throw UsageError("--size exceeds the pool");
      tuner::TuneConfig tc{tune_realizations, tune_size, common.seed, threads};
      const auto tuned = tuner::tune_tau(bundle.similarity, grid, tc);
      if (!common.out.empty()) {
        json tj;
        tj["tau"] = tuned.tau;
        tj["degenerate"] = tuned.degenerate;
        tj["grid"] = grid.values();
        tj["realizations"] = tune_realizations;
        tj["seed"] = common.seed;
        io::write_archive({{"tau.json", tj.dump(2) + "\n"},
                           {"tau_curves.csv", tau_curves_csv(tuned.curves, tuned.tau)},
                           {"tau_identification.csv", tau_identification_csv(tuned.curves)}},
                          common.out);
      }
      out << io::format_shortest(tuned.tau) << "\n";
      if (tuned.degenerate) err << "warning: proxy scores are identical across models; returned the smallest tau\n";
      return 0;
    }

    if (sweep->parsed()) {
      const auto grid = parse_grid(grid_text, tuner::TauGrid::sensitivity_default());
      const auto bundle = load(common.bundle, threads);
      if (!bundle.oracle) throw std::runtime_error("bundle has no oracle scores (references or oracle.csv)");
      const auto plan = make_plan(common, bundle.manifest.n, sweep_real->count() > 0);
      const auto curves = tuner::sensitivity_sweep(bundle.similarity, *bundle.oracle, grid, plan, threads);
      io::write_archive({{"sensitivity.csv", tau_curves_csv(curves, std::nullopt)},
                         {"sensitivity_identification.csv", tau_identification_csv(curves)}},
                        common.out);
      for (const auto& c : curves)
        out << "tau " << io::format_shortest(c.tau) << ": mean identification " << io::format_fixed6(c.mean_identification)
            << "\n";
      return 0;
    }

    if (syn->parsed()) {
      vcfg.threads = threads;
      vcfg.model_counts.clear();
      try {
        for (const auto& item : split_list(m_text)) {
          std::size_t used = 0;
          const unsigned long v = std::stoul(item, &used);
          if (used != item.size() || v == 0) throw std::invalid_argument(item);
          vcfg.model_counts.push_back(v);
        }
      } catch (const std::exception&) {
        throw UsageError("--m: malformed list '" + m_text + "'");
      }
      std::vector<double> maxps;
      if (!maxp_text.empty()) maxps = parse_decimals(maxp_text, "--maxp");
      vcfg.max_p.clear();
      for (std::size_t m : vcfg.model_counts) {
        std::vector<double> row = maxps;
        if (row.empty()) {
          try {
            row = synthetic::default_max_p(m);
          } catch (const std::invalid_argument& e) {
            throw UsageError(std::string(e.what()) + " with --maxp");
          }
        }
        for (double v : row) {
          try {
            synthetic::max_posterior(m, v);
          } catch (const std::invalid_argument&) {
            throw UsageError("--maxp " + io::format_shortest(v) + " is below 1/m for m = " + std::to_string(m));
          }
        }
        vcfg.max_p.push_back(row);
      }
      if (vcfg.seeds == 0 || vcfg.n_syn == 0) throw UsageError("--seeds and --n-syn must be positive");
      if (vcfg.d < 1 || vcfg.d > 10) throw UsageError("--d must be in [1, 10]");
      if (!(vcfg.tau > 0.0)) throw UsageError("--tau must be positive");

      const auto result = synthetic::run_validation(vcfg);
      std::string table = "m,maxP,top1,top5pct,spearman,pairwise,seeds\n";
      for (const auto& r : result.rows)
        table += std::to_string(r.m) + "," + io::format_shortest(r.max_p) + "," + io::format_fixed6(r.top1_recall) + "," +
                 io::format_fixed6(r.top5pct_recall) + "," + io::format_fixed6(r.spearman) + "," +
                 io::format_fixed6(r.pairwise_accuracy) + "," + std::to_string(r.seeds) + "\n";
      out << table;
      io::FileSet files{{"table.csv", table}};
      std::string scatter = "m,maxP,seed,query,rule_rank,mi_rank\n";
      for (const auto& p : result.scatter)
        scatter += std::to_string(p.m) + "," + io::format_shortest(p.max_p) + "," + std::to_string(p.seed) + "," +
                   std::to_string(p.query) + "," + io::format_shortest(p.rule_rank) + "," + io::format_shortest(p.mi_rank) +
                   "\n";
      files.emplace_back("scatter.csv", scatter);
      bool derivations_ok = true;
      if (derivations) {
        const auto rep = synthetic::derivation_checks(vcfg.seed);
        derivations_ok = rep.passed;
        json dj;
        dj["instances"] = rep.instances;
        dj["taylor_worst_ratio"] = rep.taylor_worst_ratio;
        dj["taylor_at_one"] = rep.taylor_at_one;
        dj["variance_max_error"] = rep.variance_max_error;
        dj["kernel_max_error"] = rep.kernel_max_error;
        dj["passed"] = rep.passed;
        files.emplace_back("derivations.json", dj.dump(2) + "\n");
        out << "derivation checks: " << (rep.passed ? "pass" : "FAIL") << "\n";
      }
      if (!common.out.empty()) io::write_archive(files, common.out);
      return derivations_ok ? 0 : 1;
    }

    if (gen->parsed()) {
      const auto bundle = io::make_planted_bundle(pcfg, threads);
      io::write_bundle(bundle, common.out);
      out << "wrote " << bundle.manifest.n << " x " << bundle.manifest.m << " bundle to " << common.out << "\n";
      return 0;
    }

    if (conv->parsed()) {
      const auto metric = metrics::parse_metric(metric_text);
      if (!metric || *metric == metrics::MetricKind::precomputed) throw UsageError("--metric: unknown or not computable");
      if (name.empty()) name = std::filesystem::path(input).stem().string();
      const auto bundle = io::convert_helm(input, *metric, name, threads);
      io::write_bundle(bundle, common.out);
      out << "wrote " << bundle.manifest.n << " x " << bundle.manifest.m << " bundle to " << common.out << "\n";
      return 0;
    }

    if (serve->parsed()) {
      const auto mode = *service::parse_mode(mode_text);
      std::map<std::string, std::shared_ptr<const io::DatasetBundle>> bundles;
      for (const auto& path : serve_bundles) {
        auto b = std::make_shared<io::DatasetBundle>(load(path, threads));
        if (const auto why = service::mode_unsupported(*b, mode)) throw std::runtime_error(path + ": " + *why);
        std::string key = b->manifest.name.empty() ? std::filesystem::path(path).filename().string() : b->manifest.name;
        if (!bundles.emplace(key, std::move(b)).second) throw UsageError("two bundles named '" + key + "'");
      }
      service::Service svc(std::move(bundles), mode);
      service::HttpServer server(svc);
      const int bound = server.bind(host, port);
      out << "listening on " << host << ":" << bound << std::endl;
      server.listen();
      return 0;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace selectllm
