#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "clusterscape/error.hpp"
#include "clusterscape/service.hpp"

namespace clusterscape {

inline constexpr const char* kAddrEnv = "CLUSTERSCAPE_ADDR";
inline constexpr const char* kDefaultAddr = "127.0.0.1:8080";

struct Address {
  std::string host;
  int port = 0;
};

// "host:port", ":port" or "http://host:port".
inline Address parse_address(std::string s) {
  if (s.rfind("http://", 0) == 0) s = s.substr(7);
  while (!s.empty() && s.back() == '/') s.pop_back();
  auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ValidationError("address needs host:port: " + s);
  Address a;
  a.host = colon == 0 ? "127.0.0.1" : s.substr(0, colon);
  try {
    std::size_t used = 0;
    a.port = std::stoi(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    throw ValidationError("bad port in address: " + s);
  }
  if (a.port < 0 || a.port > 65535) throw ValidationError("port out of range: " + s);
  return a;
}

inline std::string default_address() {
  const char* env = std::getenv(kAddrEnv);
  return env && *env ? env : kDefaultAddr;
}

inline int http_status(const Error& e) {
  if (dynamic_cast<const RuleLimitError*>(&e)) return 409;
  if (dynamic_cast<const NotFoundError*>(&e)) return 404;
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ParseError*>(&e)) return 400;
  if (dynamic_cast<const DegenerateLayoutError*>(&e) || dynamic_cast<const EmptySeriesError*>(&e)) return 422;
  return 500;
}

inline std::string error_body(const Error& e) {
  nlohmann::ordered_json j;
  j["error"] = e.kind();
  j["message"] = e.what();
  return j.dump() + "\n";
}

namespace detail {

inline std::optional<std::string> param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

inline long long int_param(const httplib::Request& req, const char* name, long long fallback) {
  auto v = param(req, name);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    long long x = std::stoll(*v, &used);
    if (used == v->size()) return x;
  } catch (const std::exception&) {
  }
  throw ValidationError(std::string("query parameter ") + name + " must be an integer");
}

inline std::optional<double> double_param(const httplib::Request& req, const char* name) {
  auto v = param(req, name);
  if (!v) return std::nullopt;
  try {
    std::size_t used = 0;
    double x = std::stod(*v, &used);
    if (used == v->size() && std::isfinite(x)) return x;
  } catch (const std::exception&) {
  }
  throw ValidationError(std::string("query parameter ") + name + " must be a number");
}

inline std::size_t count_param(const httplib::Request& req, const char* name, std::size_t fallback) {
  long long v = int_param(req, name, static_cast<long long>(fallback));
  if (v < 0) throw ValidationError(std::string("query parameter ") + name + " must be >= 0");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline DiagnosticsQuery diagnostics_query(const httplib::Request& req) {
  DiagnosticsQuery q;
  if (auto m = detail::param(req, "metric")) q.metric = parse_metric(*m);
  if (auto p = detail::param(req, "plot")) {
    if (*p == "hist") q.plot = DiagnosticsQuery::Plot::kHist;
    else if (*p == "timeline") q.plot = DiagnosticsQuery::Plot::kTimeline;
    else throw ValidationError("plot must be hist or timeline");
  }
  q.bins = detail::count_param(req, "bins", kDefaultHistogramBins);
  if (auto m = detail::param(req, "method")) q.method = parse_method(*m);
  else if (q.plot == DiagnosticsQuery::Plot::kTimeline) q.method = DistanceMethod::kEuclidean;
  q.cut = detail::double_param(req, "cut");
  if (req.has_param("k")) q.k = detail::count_param(req, "k", 0);
  q.max_points = detail::count_param(req, "max_points", q.max_points);
  q.verbose = detail::int_param(req, "verbose", 0) != 0;
  return q;
}

inline OutlierQuery outlier_query(const httplib::Request& req) {
  OutlierQuery q;
  if (auto x = detail::param(req, "x")) q.x = parse_metric(*x);
  if (auto y = detail::param(req, "y")) q.y = parse_metric(*y);
  if (auto a = detail::double_param(req, "alpha")) q.alpha = *a;
  return q;
}

struct ServerOptions {
  std::chrono::seconds tick{30};                     // violation recompute + stream tick period
  std::chrono::milliseconds keepalive{15000};         // SSE comment interval while idle
};

// HTTP front of a Service. One thread per connection (httplib pool).
class ApiServer {
 public:
  explicit ApiServer(Service& svc, ServerOptions opts = {}) : svc_(svc), opts_(opts) { routes(); }
  ~ApiServer() { stop(); }

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Port 0 binds an ephemeral port. Returns the bound port.
  int bind(const Address& addr) {
    int port = addr.port == 0 ? server_.bind_to_any_port(addr.host) : addr.port;
    if (addr.port != 0 && !server_.bind_to_port(addr.host, addr.port)) port = -1;
    if (port < 0) throw Error("cannot bind " + addr.host + ":" + std::to_string(addr.port));
    port_ = port;
    return port;
  }

  // Blocks until stop().
  void run() {
    ticker_ = std::thread([this] { tick_loop(); });
    server_.listen_after_bind();
  }

  void start() {
    listener_ = std::thread([this] { run(); });
    server_.wait_until_ready();
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    svc_.notify_all();
    server_.stop();
    if (listener_.joinable()) listener_.join();
    if (ticker_.joinable()) ticker_.join();
  }

  int port() const { return port_; }
  std::uint64_t ticks() const { return ticks_.load(); }

 private:
  template <class Fn>
  void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      res.status = http_status(e);
      res.set_content(error_body(e), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(error_body(Error(e.what())), "application/json");
    }
  }

  static void send(httplib::Response& res, std::string body, std::uint64_t snapshot, int status = 200) {
    res.status = status;
    res.set_header("X-Snapshot-Id", std::to_string(snapshot));
    res.set_content(std::move(body), "application/json");
  }

  void routes() {
    server_.Post("/v1/ingest", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto report = svc_.ingest(req.body);
        auto j = to_json(report);
        const auto snap = svc_.snapshot_id();
        j["snapshot_id"] = snap;
        const int status = report.accepted == 0 && report.rejected > 0 ? 400 : 200;
        send(res, j.dump() + "\n", snap, status);
      });
    });

    server_.Get("/v1/snapshot", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        std::uint64_t at = 0;
        auto body = svc_.snapshot(&at);
        send(res, std::move(body), at);
      });
    });

    server_.Post("/v1/layout", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::uint64_t at = 0;
        auto body = svc_.layout(req.body, &at);
        send(res, std::move(body), at);
      });
    });

    server_.Get("/v1/rules", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        std::uint64_t at = 0;
        auto body = svc_.rules(&at);
        send(res, std::move(body), at);
      });
    });

    server_.Post("/v1/rules", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto body = svc_.add_rule(req.body);
        send(res, std::move(body), svc_.snapshot_id(), 201);
      });
    });

    auto del = [this](const std::string& id, httplib::Response& res) {
      guarded(res, [&] {
        if (id.empty()) throw ValidationError("rule id required");
        svc_.delete_rule(id);
        res.status = 204;
        res.set_header("X-Snapshot-Id", std::to_string(svc_.snapshot_id()));
      });
    };
    server_.Delete(R"(/v1/rules/([^/]+))", [del](const httplib::Request& req, httplib::Response& res) {
      del(req.matches[1], res);
    });
    server_.Delete("/v1/rules", [del](const httplib::Request& req, httplib::Response& res) {
      del(req.has_param("id") ? req.get_param_value("id") : "", res);
    });

    server_.Get("/v1/violations", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::optional<std::uint64_t> snap;
        if (req.has_param("snapshot")) {
          long long v = detail::int_param(req, "snapshot", 0);
          if (v < 0) throw ValidationError("snapshot must be >= 0");
          snap = static_cast<std::uint64_t>(v);
        }
        std::uint64_t at = 0;
        auto body = svc_.violations(snap, detail::param(req, "group_by").value_or("workload_id"), &at);
        send(res, std::move(body), at);
      });
    });

    server_.Get(R"(/v1/workloads/([^/]+)/diagnostics)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::uint64_t at = 0;
        auto body = svc_.diagnostics(req.matches[1], diagnostics_query(req), &at);
        send(res, std::move(body), at);
      });
    });

    server_.Get(R"(/v1/workloads/([^/]+)/timeline)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Metric metric = parse_metric(detail::param(req, "metric").value_or("utilization_pct"));
        std::optional<Timestamp> from, to;
        if (req.has_param("from")) from = detail::int_param(req, "from", 0);
        if (req.has_param("to")) to = detail::int_param(req, "to", 0);
        const auto max_points = detail::count_param(req, "max_points", 200);
        std::uint64_t at = 0;
        auto body = svc_.timeline(req.matches[1], metric, from, to, max_points, &at);
        send(res, std::move(body), at);
      });
    });

    server_.Get(R"(/v1/workloads/([^/]+)/outliers)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::uint64_t at = 0;
        auto body = svc_.outliers(req.matches[1], outlier_query(req), &at);
        send(res, std::move(body), at);
      });
    });

    // Server-sent events: "snapshot" whenever the id changes (first one
    // immediately), "tick" after each periodic violation recompute.
    server_.Get("/v1/stream", [this](const httplib::Request&, httplib::Response& res) {
      struct Conn {
        std::optional<std::uint64_t> sent;
        std::uint64_t tick_seen = 0;
        std::chrono::steady_clock::time_point last_write = std::chrono::steady_clock::now();
      };
      auto conn = std::make_shared<Conn>();
      conn->tick_seen = ticks_.load();
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, conn](std::size_t, httplib::DataSink& sink) {
        if (stopping_) return false;
        std::string out;
        const auto now_id = conn->sent ? svc_.wait_for_change(*conn->sent, std::chrono::milliseconds(500))
                                       : svc_.snapshot_id();
        if (stopping_) return false;
        if (!conn->sent || now_id > *conn->sent) {
          out += "event: snapshot\ndata: {\"snapshot_id\":" + std::to_string(now_id) + "}\n\n";
          conn->sent = now_id;
        }
        const auto t = ticks_.load();
        if (t != conn->tick_seen) {
          conn->tick_seen = t;
          out += "event: tick\ndata: {\"snapshot_id\":" + std::to_string(now_id) +
                 ",\"tick\":" + std::to_string(t) + "}\n\n";
        }
        const auto clock = std::chrono::steady_clock::now();
        if (out.empty() && clock - conn->last_write >= opts_.keepalive) out = ": keepalive\n\n";
        if (!out.empty()) {
          conn->last_write = clock;
          if (!sink.write(out.data(), out.size())) return false;
        }
        return sink.is_writable();
      });
    });
  }

  void tick_loop() {
    auto next = std::chrono::steady_clock::now() + opts_.tick;
    while (!stopping_) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      if (std::chrono::steady_clock::now() < next) continue;
      next += opts_.tick;
      try {
        svc_.violations();
      } catch (const Error&) {
      }
      ++ticks_;
      svc_.notify_all();
    }
  }

  Service& svc_;
  ServerOptions opts_;
  httplib::Server server_;
  std::thread listener_;
  std::thread ticker_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> ticks_{0};
  int port_ = 0;
};

}  // namespace clusterscape
