#include "termadventure/monitor_server.hpp"

#include <atomic>
#include <charconv>

#include <httplib.h>

namespace ta {

namespace {

using nlohmann::json;

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, {{"error", message}}, status);
}

template <typename T>
std::optional<T> number_param(const httplib::Request& req, const char* name, T fallback) {
  if (!req.has_param(name)) return fallback;
  const auto text = req.get_param_value(name);
  T value{};
  const auto parsed = std::from_chars(text.data(), text.data() + text.size(), value);
  if (parsed.ec != std::errc() || parsed.ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

bool truthy(const std::string& text) { return text == "1" || text == "true" || text == "yes"; }

json snapshot_json(const MonitorStore& store, const std::string& lab) {
  const auto now = now_utc();
  const auto students = store.snapshot(lab);
  const auto flags = detect_stuck(students, store.thresholds(), now);
  json rows = json::array();
  for (const auto& s : students) {
    auto row = to_json(s);
    row["idle_seconds"] = std::chrono::duration<double>(now - s.last_activity).count();
    json reasons = json::array();
    for (const auto& f : flags) {
      if (f.user == s.user) reasons.push_back(f.reason);
    }
    row["stuck"] = std::move(reasons);
    rows.push_back(std::move(row));
  }
  return {{"lab_id", lab}, {"generated_at", format_timestamp(now)}, {"version", store.version()}, {"students", rows}};
}

}  // namespace

struct MonitorServer::Impl {
  MonitorStore& store;
  ServerConfig config;
  httplib::Server server;
  std::atomic<bool> stopping{false};

  Impl(MonitorStore& s, ServerConfig c) : store(s), config(std::move(c)) { routes(); }

  bool authorized(const httplib::Request& req) const {
    if (config.token.empty()) return true;
    if (req.get_header_value("Authorization") == "Bearer " + config.token) return true;
    return req.has_param("token") && req.get_param_value("token") == config.token;
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"}});
    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (req.method == "OPTIONS" || req.path.rfind("/api/v1/labs", 0) != 0 || authorized(req)) {
        return httplib::Server::HandlerResponse::Unhandled;
      }
      send_error(res, 401, "missing or wrong instructor token");
      return httplib::Server::HandlerResponse::Handled;
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      } catch (...) {
        send_error(res, 500, "internal error");
      }
    });
    server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Post("/api/v1/events", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        return send_error(res, 400, std::string("body is not JSON: ") + e.what());
      }
      try {
        auto event = event_from_json(body);
        if (event.event_id.empty()) event.event_id = generate_event_id();
        const auto id = event.event_id;
        const auto result = store.ingest(std::move(event));
        send_json(res, {{"status", result == IngestResult::accepted ? "accepted" : "duplicate"}, {"event_id", id}});
      } catch (const EventFormatError& e) {
        send_error(res, 400, e.what());
      }
    });

    server.Get("/api/v1/labs", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, {{"labs", store.labs()}});
    });

    server.Get("/api/v1/labs/:lab/snapshot", [this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, snapshot_json(store, req.path_params.at("lab")));
    });

    server.Get("/api/v1/labs/:lab/students/:user/history", [this](const httplib::Request& req,
                                                                   httplib::Response& res) {
      json events = json::array();
      for (const auto& e : store.history(req.path_params.at("lab"), req.path_params.at("user"))) {
        events.push_back(to_json(e));
      }
      send_json(res, {{"lab_id", req.path_params.at("lab")}, {"user", req.path_params.at("user")}, {"events", events}});
    });

    server.Get("/api/v1/labs/:lab/stats", [this](const httplib::Request& req, httplib::Response& res) {
      json levels = json::array();
      for (const auto& s : store.statistics(req.path_params.at("lab"))) levels.push_back(to_json(s));
      send_json(res, {{"lab_id", req.path_params.at("lab")}, {"levels", levels}});
    });

    server.Get("/api/v1/labs/:lab/stuck", [this](const httplib::Request& req, httplib::Response& res) {
      const auto idle = number_param<long long>(req, "idle", store.thresholds().idle.count());
      const auto attempts = number_param<std::size_t>(req, "attempts", store.thresholds().attempts);
      if (!idle || !attempts || *idle < 0) return send_error(res, 400, "idle and attempts must be non-negative integers");
      StuckThresholds thresholds{std::chrono::seconds(*idle), *attempts};
      json flags = json::array();
      for (const auto& f : store.stuck(req.path_params.at("lab"), now_utc(), thresholds)) {
        flags.push_back({{"user", f.user}, {"reason", f.reason}});
      }
      send_json(res, {{"lab_id", req.path_params.at("lab")}, {"stuck", flags}});
    });

    server.Post("/api/v1/labs/:lab/ack", [this](const httplib::Request& req, httplib::Response& res) {
      std::string user;
      try {
        const auto body = json::parse(req.body);
        if (body.is_object() && body.contains("user") && body["user"].is_string()) user = body["user"];
        if (body.is_string()) user = body.get<std::string>();
      } catch (const json::exception&) {
        user = req.body;
      }
      while (!user.empty() && std::isspace(static_cast<unsigned char>(user.back()))) user.pop_back();
      if (user.empty()) return send_error(res, 400, "ack needs a user");
      store.acknowledge(req.path_params.at("lab"), user);
      send_json(res, {{"status", "acknowledged"}, {"user", user}});
    });

    server.Put("/api/v1/labs/:lab/levels", [this](const httplib::Request& req, httplib::Response& res) {
      std::vector<std::string> levels;
      try {
        const auto body = json::parse(req.body);
        const auto& list = body.is_object() ? body.at("levels") : body;
        levels = list.get<std::vector<std::string>>();
      } catch (const json::exception&) {
        return send_error(res, 400, "body must be a JSON list of level names");
      }
      store.register_levels(req.path_params.at("lab"), levels);
      const auto known = store.known_levels(req.path_params.at("lab"));
      send_json(res, {{"levels", std::vector<std::string>(known.begin(), known.end())}});
    });

    server.Get("/api/v1/labs/:lab/grades.csv", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto scheme = parse_grading_scheme(req.has_param("scheme") ? req.get_param_value("scheme") : "");
        res.set_content(store.grades(req.path_params.at("lab"), scheme), "text/csv");
        res.set_header("Content-Disposition", "attachment; filename=\"grades.csv\"");
      } catch (const GradingError& e) {
        send_error(res, 400, e.what());
      }
    });

    server.Get("/api/v1/labs/:lab/levels/:level/clusters", [this](const httplib::Request& req,
                                                                   httplib::Response& res) {
      const auto k = number_param<std::size_t>(req, "k", 2);
      const auto seed = number_param<std::uint64_t>(req, "seed", 1);
      if (!k || !seed) return send_error(res, 400, "k and seed must be non-negative integers");
      try {
        GroupOptions options;
        options.k = *k;
        options.seed = *seed;
        options.distance = parse_distance(req.has_param("distance") ? req.get_param_value("distance") : "jaccard");
        const bool include_failures = req.has_param("include_failures") && truthy(req.get_param_value("include_failures"));
        const auto solutions = store.solutions(req.path_params.at("lab"), req.path_params.at("level"), include_failures);
        auto body = to_json(solution_groups(solutions, options), options.distance);
        body["lab_id"] = req.path_params.at("lab");
        body["level_id"] = req.path_params.at("level");
        body["include_failures"] = include_failures;
        send_json(res, body);
      } catch (const AnalyticsError& e) {
        send_error(res, 400, e.what());
      }
    });

    server.Get("/api/v1/labs/:lab/stream", [this](const httplib::Request& req, httplib::Response& res) {
      const auto lab = req.path_params.at("lab");
      auto last = std::make_shared<std::optional<std::uint64_t>>();
      auto quiet_since = std::make_shared<std::chrono::steady_clock::time_point>(std::chrono::steady_clock::now());
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, lab, last, quiet_since](std::size_t,
                                                                                          httplib::DataSink& sink) {
        if (stopping) {
          sink.done();
          return false;
        }
        std::uint64_t version = store.version();
        if (*last && version == **last) version = store.wait_for_change(**last, std::chrono::milliseconds(250));
        if (!*last || version != **last) {
          *last = version;
          *quiet_since = std::chrono::steady_clock::now();
          const auto message = "event: snapshot\ndata: " + snapshot_json(store, lab).dump() + "\n\n";
          return sink.write(message.data(), message.size());
        }
        if (std::chrono::steady_clock::now() - *quiet_since >= config.stream_heartbeat) {
          *quiet_since = std::chrono::steady_clock::now();
          static constexpr std::string_view keepalive = ": keepalive\n\n";
          return sink.write(keepalive.data(), keepalive.size());
        }
        return sink.is_writable();
      });
    });
  }
};

MonitorServer::MonitorServer(MonitorStore& store, ServerConfig config)
    : impl_(std::make_unique<Impl>(store, std::move(config))) {}

MonitorServer::~MonitorServer() { stop(); }

int MonitorServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void MonitorServer::listen() { impl_->server.listen_after_bind(); }

int MonitorServer::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  thread_ = std::thread([this] { listen(); });
  impl_->server.wait_until_ready();
  return bound;
}

void MonitorServer::stop() {
  impl_->stopping = true;
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace ta
