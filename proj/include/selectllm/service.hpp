#pragma once

// Interactive annotation sessions over HTTP/JSON.
//
//   POST   /sessions                {bundle?, tau, budget?, mode?, reveal_outputs?}
//   GET    /sessions/{id}/next
//   POST   /sessions/{id}/annotate  {query_id, reference_text | accept_replay: true}
//   GET    /sessions/{id}/report
//   DELETE /sessions/{id}
//
// Errors carry {"error": message, "code": token}.

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "selectllm/io.hpp"
#include "selectllm/selector.hpp"

namespace selectllm::service {

enum class Mode { live, replay };

std::optional<Mode> parse_mode(std::string_view text);
std::string_view to_string(Mode mode);

struct ApiResponse {
  int status = 200;
  std::string body;  // JSON, empty for 204
};

/// Checks that `bundle` can host sessions in `mode`; returns the reason if not.
std::optional<std::string> mode_unsupported(const io::DatasetBundle& bundle, Mode mode);

class Service {
 public:
  /// Bundles by name. `default_mode` applies when a create request names none.
  Service(std::map<std::string, std::shared_ptr<const io::DatasetBundle>> bundles, Mode default_mode = Mode::live);

  /// Transport-independent entry point; `path` excludes any query string.
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body);

  std::size_t session_count() const;

 private:
  struct Session {
    std::mutex mutex;
    std::shared_ptr<const io::DatasetBundle> bundle;
    Mode mode;
    bool reveal_outputs;
    double tau;
    std::unique_ptr<SelectLlmLoop> loop;
    std::optional<QueryId> pending;
    std::chrono::system_clock::time_point created, updated;
  };

  ApiResponse create(const std::string& body);
  ApiResponse next(Session& s);
  ApiResponse annotate(Session& s, const std::string& body);
  ApiResponse report(Session& s);
  std::shared_ptr<Session> find(const std::string& id) const;
  std::string fresh_id();

  std::map<std::string, std::shared_ptr<const io::DatasetBundle>> bundles_;
  Mode default_mode_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex id_mutex_;
};

/// HTTP front end for a Service.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port, throws on failure.
  int bind(const std::string& host, int port);
  /// Serves until stop(); requires a successful bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace selectllm::service
