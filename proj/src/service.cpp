#include "selectllm/service.hpp"

#include <cmath>
#include <random>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "selectllm/metrics.hpp"

using json = nlohmann::ordered_json;

namespace selectllm::service {

namespace {

ApiResponse error(int status, std::string_view code, const std::string& message) {
  json j;
  j["error"] = message;
  j["code"] = std::string(code);
  return {status, j.dump()};
}

ApiResponse ok(int status, const json& j) { return {status, j.dump()}; }

std::int64_t millis(std::chrono::system_clock::time_point t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos < path.size()) {
    std::size_t end = path.find('/', pos);
    if (end == std::string::npos) end = path.size();
    if (end > pos) parts.push_back(path.substr(pos, end - pos));
    pos = end + 1;
  }
  return parts;
}

std::optional<json> parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    json j = json::parse(body);
    if (!j.is_object()) return std::nullopt;
    return j;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

}  // namespace

std::optional<Mode> parse_mode(std::string_view text) {
  if (text == "live") return Mode::live;
  if (text == "replay") return Mode::replay;
  return std::nullopt;
}

std::string_view to_string(Mode mode) { return mode == Mode::live ? "live" : "replay"; }

std::optional<std::string> mode_unsupported(const io::DatasetBundle& bundle, Mode mode) {
  if (mode == Mode::live) {
    if (!bundle.responses) return "live mode needs model responses (responses.jsonl) in the bundle";
    if (bundle.manifest.metric == metrics::MetricKind::precomputed)
      return "live mode needs a computable metric in the bundle manifest";
  } else if (!bundle.oracle) {
    return "replay mode needs an oracle matrix in the bundle";
  }
  return std::nullopt;
}

Service::Service(std::map<std::string, std::shared_ptr<const io::DatasetBundle>> bundles, Mode default_mode)
    : bundles_(std::move(bundles)), default_mode_(default_mode) {}

std::size_t Service::session_count() const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

std::string Service::fresh_id() {
  static constexpr char hex[] = "0123456789abcdef";
  std::lock_guard lock(id_mutex_);
  std::random_device rd;
  std::string id;
  for (int w = 0; w < 4; ++w) {
    std::uint32_t v = rd();
    for (int k = 0; k < 8; ++k, v >>= 4) id += hex[v & 0xF];
  }
  return id;
}

std::shared_ptr<Service::Session> Service::find(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

ApiResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  const auto parts = split_path(path);
  if (parts.empty() || parts[0] != "sessions") return error(404, "not_found", "no such endpoint");
  try {
    if (parts.size() == 1) {
      if (method != "POST") return error(405, "method_not_allowed", "use POST /sessions");
      return create(body);
    }
    if (parts.size() == 2 && method == "DELETE") {
      std::unique_lock lock(sessions_mutex_);
      if (sessions_.erase(parts[1]) == 0) return error(404, "unknown_session", "no session " + parts[1]);
      return {204, ""};
    }
    if (parts.size() != 3) return error(404, "not_found", "no such endpoint");
    const auto session = find(parts[1]);
    if (!session) return error(404, "unknown_session", "no session " + parts[1]);
    const std::string& action = parts[2];
    if (action == "next" && method == "GET") return next(*session);
    if (action == "annotate" && method == "POST") return annotate(*session, body);
    if (action == "report" && method == "GET") return report(*session);
    if (action == "next" || action == "annotate" || action == "report")
      return error(405, "method_not_allowed", "wrong method for /" + action);
    return error(404, "not_found", "no such endpoint");
  } catch (const std::exception& e) {
    return error(500, "internal", e.what());
  }
}

ApiResponse Service::create(const std::string& body) {
  const auto req = parse_body(body);
  if (!req) return error(400, "invalid_request", "body must be a JSON object");

  std::shared_ptr<const io::DatasetBundle> bundle;
  if (req->contains("bundle")) {
    if (!(*req)["bundle"].is_string()) return error(400, "invalid_request", "'bundle' must be a string");
    const auto it = bundles_.find((*req)["bundle"].get<std::string>());
    if (it == bundles_.end()) return error(404, "unknown_bundle", "no bundle " + (*req)["bundle"].get<std::string>());
    bundle = it->second;
  } else if (bundles_.size() == 1) {
    bundle = bundles_.begin()->second;
  } else {
    return error(400, "invalid_request", "'bundle' is required when several bundles are served");
  }

  if (!req->contains("tau") || !(*req)["tau"].is_number())
    return error(400, "invalid_request", "'tau' must be a number");
  const double tau = (*req)["tau"].get<double>();
  if (!(tau > 0.0) || !std::isfinite(tau)) return error(400, "invalid_request", "'tau' must be positive");

  const std::size_t n = bundle->manifest.n;
  std::size_t budget = n;
  if (req->contains("budget")) {
    const auto& b = (*req)["budget"];
    if (!b.is_number_integer() || b.get<std::int64_t>() < 0)
      return error(400, "invalid_request", "'budget' must be a non-negative integer");
    if (b.get<std::uint64_t>() > n)
      return error(400, "invalid_request", "'budget' exceeds the " + std::to_string(n) + " queries");
    budget = b.get<std::size_t>();
  }

  Mode mode = default_mode_;
  if (req->contains("mode")) {
    const auto& mj = (*req)["mode"];
    const auto parsed = mj.is_string() ? parse_mode(mj.get<std::string>()) : std::nullopt;
    if (!parsed) return error(400, "invalid_request", "'mode' must be \"live\" or \"replay\"");
    mode = *parsed;
  }
  if (const auto why = mode_unsupported(*bundle, mode)) return error(400, "mode_unsupported", *why);

  bool reveal = false;
  if (req->contains("reveal_outputs")) {
    if (!(*req)["reveal_outputs"].is_boolean()) return error(400, "invalid_request", "'reveal_outputs' must be a boolean");
    reveal = (*req)["reveal_outputs"].get<bool>();
  }

  auto s = std::make_shared<Session>();
  s->bundle = bundle;
  s->mode = mode;
  s->reveal_outputs = reveal;
  s->tau = tau;
  s->loop = std::make_unique<SelectLlmLoop>(bundle->similarity, tau, budget, uniform_prior(bundle->manifest.m));
  s->created = s->updated = std::chrono::system_clock::now();

  std::string id;
  {
    std::unique_lock lock(sessions_mutex_);
    do id = fresh_id();
    while (sessions_.count(id));
    sessions_.emplace(id, s);
  }
  json out;
  out["session_id"] = id;
  out["n"] = n;
  out["m"] = bundle->manifest.m;
  out["model_names"] = bundle->manifest.models;
  out["mode"] = std::string(to_string(mode));
  out["tau"] = tau;
  out["budget"] = budget;
  return ok(201, out);
}

ApiResponse Service::next(Session& s) {
  std::lock_guard lock(s.mutex);
  if (s.loop->finished()) return error(409, "budget_exhausted", "the labeling budget is used up");
  if (!s.pending) s.pending = s.loop->propose();
  const std::size_t q = s.pending->index;
  json out;
  out["query_id"] = q;
  out["step"] = s.loop->state().step;
  out["budget"] = s.loop->state().budget;
  if (s.bundle->responses) {
    const auto& rec = (*s.bundle->responses)[q];
    if (rec.prompt) out["query_text"] = *rec.prompt;
    if (s.reveal_outputs) out["outputs"] = rec.outputs;
  }
  return ok(200, out);
}

ApiResponse Service::annotate(Session& s, const std::string& body) {
  const auto req = parse_body(body);
  if (!req) return error(400, "invalid_request", "body must be a JSON object");
  if (!req->contains("query_id") || !(*req)["query_id"].is_number_unsigned())
    return error(400, "invalid_request", "'query_id' must be a non-negative integer");
  const std::size_t q = (*req)["query_id"].get<std::size_t>();

  std::lock_guard lock(s.mutex);
  if (s.loop->finished()) return error(409, "budget_exhausted", "the labeling budget is used up");
  if (!s.pending || s.pending->index != q)
    return error(409, "stale_query", "query " + std::to_string(q) + " is not the pending query");

  std::vector<double> row;
  if (s.mode == Mode::live) {
    if (!req->contains("reference_text") || !(*req)["reference_text"].is_string())
      return error(400, "missing_reference", "live mode needs 'reference_text'");
    const std::string ref = (*req)["reference_text"].get<std::string>();
    for (const auto& output : (*s.bundle->responses)[q].outputs)
      row.push_back(metrics::score(s.bundle->manifest.metric, output, ref));
  } else {
    if (!req->contains("accept_replay") || !(*req)["accept_replay"].is_boolean() ||
        !(*req)["accept_replay"].get<bool>())
      return error(400, "invalid_request", "replay mode needs 'accept_replay': true");
    const auto r = s.bundle->oracle->row(q);
    row.assign(r.begin(), r.end());
  }

  const TrajectoryRecord& rec = s.loop->observe(*s.pending, std::move(row));
  s.pending.reset();
  s.updated = std::chrono::system_clock::now();
  json out;
  out["posterior"] = std::vector<double>(rec.posterior_after.probs().begin(), rec.posterior_after.probs().end());
  out["map_best"] = rec.map_best.index;
  out["empirical_best"] = rec.empirical_best.index;
  out["step"] = s.loop->state().step;
  out["oracle_row"] = rec.oracle_row;
  return ok(200, out);
}

ApiResponse Service::report(Session& s) {
  std::lock_guard lock(s.mutex);
  const auto& st = s.loop->state();
  json out;
  json traj = json::array();
  for (const auto& r : s.loop->trajectory().records) {
    json e;
    e["step"] = r.step;
    e["query_id"] = r.query.index;
    e["oracle_row"] = r.oracle_row;
    e["posterior"] = std::vector<double>(r.posterior_after.probs().begin(), r.posterior_after.probs().end());
    e["map_best"] = r.map_best.index;
    e["empirical_best"] = r.empirical_best.index;
    traj.push_back(std::move(e));
  }
  out["trajectory"] = std::move(traj);
  out["posterior"] = std::vector<double>(st.posterior.probs().begin(), st.posterior.probs().end());
  out["map_best"] = map_best(st.posterior).index;
  out["empirical_best"] = st.annotated.empty() ? json(nullptr) : json(empirical_best(st.annotated).index);
  out["model_names"] = s.bundle->manifest.models;
  out["step"] = st.step;
  out["budget"] = st.budget;
  out["finished"] = s.loop->finished();
  out["mode"] = std::string(to_string(s.mode));
  out["created_ms"] = millis(s.created);
  out["updated_ms"] = millis(s.updated);
  return ok(200, out);
}

struct HttpServer::Impl {
  Service* service;
  httplib::Server server;
  bool bound = false;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>()) {
  impl_->service = &service;
  auto dispatch = [svc = &service](const httplib::Request& req, httplib::Response& res) {
    const ApiResponse r = svc->handle(req.method, req.path, req.body);
    res.status = r.status;
    if (!r.body.empty()) res.set_content(r.body, "application/json");
  };
  impl_->server.Get(R"(/sessions.*)", dispatch);
  impl_->server.Post(R"(/sessions.*)", dispatch);
  impl_->server.Delete(R"(/sessions.*)", dispatch);
  impl_->server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      json j;
      j["error"] = "no such endpoint";
      j["code"] = res.status == 404 ? "not_found" : "http_error";
      res.set_content(j.dump(), "application/json");
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound = -1;
  if (port == 0)
    bound = impl_->server.bind_to_any_port(host);
  else if (impl_->server.bind_to_port(host, port))
    bound = port;
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->bound = true;
  return bound;
}

void HttpServer::listen() {
  if (!impl_->bound) throw std::logic_error("http server: bind() first");
  impl_->server.listen_after_bind();
}

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace selectllm::service
