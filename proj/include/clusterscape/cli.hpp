#pragma once

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "clusterscape/error.hpp"
#include "clusterscape/http.hpp"
#include "clusterscape/service.hpp"
#include "clusterscape/sim.hpp"

namespace clusterscape::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << body;
  if (!out) throw Error("write failed: " + path);
}

inline nlohmann::json read_json_file(const std::string& path) {
  const auto text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed JSON in " + path, e.byte == 0 ? 0 : e.byte - 1);
  }
}

// Local engine state: a trace replayed into a fresh Service.
inline std::unique_ptr<Service> load_service(const std::string& trace, const std::optional<std::string>& rules,
                                             std::ostream& err) {
  ServiceOptions opts;
  if (rules) {
    read_file(*rules);
    opts.rules_path = rules;
  }
  auto svc = std::make_unique<Service>(opts);
  const auto report = svc->ingest(read_file(trace));
  if (report.rejected > 0) {
    err << "warning: " << report.rejected << " trace lines rejected\n";
    for (const auto& e : report.errors) err << "  " << e << '\n';
  }
  return svc;
}

class Remote {
 public:
  explicit Remote(const std::string& addr) : addr_(parse_address(addr)), client_(addr_.host, addr_.port) {
    client_.set_read_timeout(120, 0);
    client_.set_write_timeout(120, 0);
  }

  std::string get(const std::string& path) { return check(client_.Get(path), path); }
  std::string post(const std::string& path, const std::string& body, const char* type = "application/json") {
    return check(client_.Post(path, body, type), path);
  }

 private:
  std::string check(const httplib::Result& r, const std::string& path) {
    if (!r) throw Error("cannot reach " + addr_.host + ":" + std::to_string(addr_.port) + " (" + path + ")");
    if (r->status >= 200 && r->status < 300) return r->body;
    std::string message = r->body;
    try {
      message = nlohmann::json::parse(r->body).value("message", r->body);
    } catch (const nlohmann::json::exception&) {
    }
    if (r->status == 404) throw NotFoundError(message);
    if (r->status == 409) throw RuleLimitError(message);
    if (r->status == 400) throw ValidationError(message);
    throw Error("HTTP " + std::to_string(r->status) + ": " + message);
  }

  Address addr_;
  httplib::Client client_;
};

inline std::string query_string(const std::vector<std::pair<std::string, std::string>>& params) {
  std::string q;
  for (const auto& [k, v] : params) {
    q += q.empty() ? '?' : '&';
    q += k + "=" + httplib::detail::encode_query_param(v);
  }
  return q;
}

inline std::string violations_table(const std::string& body) {
  const auto j = nlohmann::json::parse(body);
  const auto& m = j["matrix"];
  std::ostringstream os;
  os << std::left << std::setw(16) << "gpu" << std::setw(12) << "workload";
  for (const auto& r : m["rules"]) os << ' ' << std::setw(10) << r.get<std::string>();
  os << '\n';
  for (const auto& row : m["rows"]) {
    os << std::setw(16) << row["gpu"].get<std::string>() << std::setw(12) << row["workload_id"].get<std::string>();
    for (std::size_t c = 0; c < row["fired"].size(); ++c) {
      const char* mark = !row["evaluable"][c].get<bool>() ? "n/a" : row["fired"][c].get<bool>() ? "FIRED" : "-";
      os << ' ' << std::setw(10) << mark;
    }
    os << '\n';
  }
  return os.str();
}

struct Options {
  // simulate
  std::string config_path, out_path, summary_path;
  std::optional<std::uint64_t> seed;
  std::string placement, queue;
  // shared
  std::string trace, rules, server, format = "json", group_by = "workload_id";
  // serve
  std::string addr, spill;
  int tick_s = 30;
  bool local = false;
  std::size_t batch_lines = 5000;
  // rules add
  std::string rule_json, rule_file;
  // diagnose
  std::string workload, metric = "utilization_pct", plot = "hist", method;
  std::size_t bins = kDefaultHistogramBins, max_points = 200;
  std::optional<double> cut;
  std::optional<std::size_t> k;
  bool verbose = false;
  std::string x = "utilization_pct", y = "power_watts", outliers_out;
  double alpha = 0.01;
  // layout
  std::string spec_path;
};

inline void emit(const Options& o, const std::string& body, std::ostream& out) {
  if (o.out_path.empty()) out << body;
  else write_file(o.out_path, body);
}

inline std::optional<std::string> opt_path(const std::string& s) {
  return s.empty() ? std::nullopt : std::optional<std::string>(s);
}

inline int cmd_simulate(const Options& o, std::ostream& out) {
  auto cfg = sim::config_from_json(read_json_file(o.config_path));
  if (o.seed) cfg.seed = *o.seed;
  if (o.placement == "Spread") cfg.placement = sim::PlacementPolicy::kSpread;
  else if (o.placement == "MostAllocated") cfg.placement = sim::PlacementPolicy::kMostAllocated;
  if (o.queue == "FCFS") cfg.queue = sim::QueuePolicy::kFcfs;
  else if (o.queue == "PrioritySize") cfg.queue = sim::QueuePolicy::kPrioritySize;
  const auto result = sim::simulate(cfg);
  {
    std::ofstream trace(o.out_path, std::ios::binary | std::ios::trunc);
    if (!trace) throw Error("cannot write " + o.out_path);
    sim::write_trace(result, trace);
    if (!trace) throw Error("write failed: " + o.out_path);
  }
  const std::string summary_path = o.summary_path.empty() ? o.out_path + ".summary.json" : o.summary_path;
  write_file(summary_path, sim::summary_json(result).dump(2) + "\n");
  out << "wrote " << o.out_path << " and " << summary_path << '\n';
  return kExitOk;
}

inline volatile std::sig_atomic_t g_stop_requested = 0;

inline int cmd_serve(const Options& o, std::ostream& out, std::ostream& err) {
  ServiceOptions so;
  so.rules_path = opt_path(o.rules);
  if (!o.spill.empty()) so.store.spill_path = o.spill;
  Service svc(so);
  if (!o.trace.empty()) {
    const auto report = svc.ingest(read_file(o.trace));
    err << "loaded " << report.accepted << " records (" << report.rejected << " rejected)\n";
  }
  ServerOptions opts;
  if (o.tick_s < 1) throw ValidationError("--tick must be >= 1");
  opts.tick = std::chrono::seconds(o.tick_s);
  ApiServer server(svc, opts);
  const auto addr = parse_address(o.addr.empty() ? default_address() : o.addr);
  const int port = server.bind(addr);
  out << "listening on " << addr.host << ":" << port << std::endl;
  g_stop_requested = 0;
  std::signal(SIGINT, [](int) { g_stop_requested = 1; });
  std::signal(SIGTERM, [](int) { g_stop_requested = 1; });
  std::atomic<bool> done{false};
  std::thread watcher([&] {
    while (!done && !g_stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  });
  server.run();
  done = true;
  watcher.join();
  return kExitOk;
}

inline int cmd_ingest(const Options& o, std::ostream& out, std::ostream& err) {
  const auto text = read_file(o.trace);
  if (o.local) {
    Service svc;
    auto j = to_json(svc.ingest(text));
    j["snapshot_id"] = svc.snapshot_id();
    out << j.dump() << '\n';
    return kExitOk;
  }
  if (o.batch_lines == 0) throw ValidationError("--batch-lines must be >= 1");
  Remote remote(o.server.empty() ? default_address() : o.server);
  std::size_t accepted = 0, rejected = 0;
  std::uint64_t snapshot = 0;
  std::vector<std::string> errors;
  std::size_t pos = 0, base_line = 0;
  while (pos < text.size()) {
    std::size_t end = pos, lines = 0;
    while (end < text.size() && lines < o.batch_lines) {
      auto nl = text.find('\n', end);
      end = nl == std::string::npos ? text.size() : nl + 1;
      ++lines;
    }
    const auto r = remote.post("/v1/ingest", text.substr(pos, end - pos), "application/x-ndjson");
    const auto j = nlohmann::json::parse(r);
    accepted += j["accepted"].get<std::size_t>();
    rejected += j["rejected"].get<std::size_t>();
    snapshot = j["snapshot_id"].get<std::uint64_t>();
    for (const auto& e : j["errors"]) {
      // Re-base "line N" to the position in the whole file.
      auto msg = e.get<std::string>();
      if (msg.rfind("line ", 0) == 0) {
        auto colon = msg.find(':');
        msg = "line " + std::to_string(base_line + std::stoul(msg.substr(5, colon - 5))) + msg.substr(colon);
      }
      if (errors.size() < 20) errors.push_back(msg);
    }
    base_line += lines;
    pos = end;
  }
  nlohmann::ordered_json j;
  j["accepted"] = accepted;
  j["rejected"] = rejected;
  j["errors"] = errors;
  j["snapshot_id"] = snapshot;
  out << j.dump() << '\n';
  if (rejected > 0) err << "warning: " << rejected << " lines rejected\n";
  return kExitOk;
}

inline std::string rule_body(const Options& o) {
  if (!o.rule_json.empty() && !o.rule_file.empty()) throw ValidationError("use --rule or --rule-file, not both");
  if (!o.rule_json.empty()) return o.rule_json;
  if (!o.rule_file.empty()) return read_file(o.rule_file);
  throw ValidationError("--rule or --rule-file is required");
}

inline int cmd_rules_add(const Options& o, std::ostream& out) {
  const auto body = rule_body(o);
  if (!o.server.empty()) {
    emit(o, Remote(o.server).post("/v1/rules", body), out);
    return kExitOk;
  }
  if (o.rules.empty()) throw ValidationError("--rules <file> or --server is required");
  ServiceOptions so;
  so.rules_path = o.rules;
  Service svc(so);
  emit(o, svc.add_rule(body), out);
  return kExitOk;
}

inline int cmd_rules_list(const Options& o, std::ostream& out) {
  if (!o.server.empty()) {
    emit(o, Remote(o.server).get("/v1/rules"), out);
    return kExitOk;
  }
  if (o.rules.empty()) throw ValidationError("--rules <file> or --server is required");
  emit(o, RuleSet::load(o.rules).to_json().dump() + "\n", out);
  return kExitOk;
}

inline int cmd_rules_eval(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.format != "json" && o.format != "table") throw ValidationError("--format must be json or table");
  std::string body;
  if (!o.server.empty()) {
    body = Remote(o.server).get("/v1/violations" + query_string({{"group_by", o.group_by}}));
  } else {
    if (o.trace.empty() || o.rules.empty()) throw ValidationError("--trace and --rules are required without --server");
    body = load_service(o.trace, o.rules, err)->violations(std::nullopt, o.group_by);
  }
  emit(o, o.format == "json" ? body : violations_table(body), out);
  return kExitOk;
}

inline int cmd_diagnose(const Options& o, std::ostream& out, std::ostream& err) {
  std::vector<std::pair<std::string, std::string>> dq = {{"metric", o.metric}, {"plot", o.plot}};
  DiagnosticsQuery q;
  q.metric = parse_metric(o.metric);
  if (o.plot == "hist") q.plot = DiagnosticsQuery::Plot::kHist;
  else if (o.plot == "timeline") q.plot = DiagnosticsQuery::Plot::kTimeline;
  else throw ValidationError("--plot must be hist or timeline");
  q.bins = o.bins;
  dq.push_back({"bins", std::to_string(o.bins)});
  if (!o.method.empty()) {
    q.method = parse_method(o.method);
    dq.push_back({"method", o.method});
  } else if (q.plot == DiagnosticsQuery::Plot::kTimeline) {
    q.method = DistanceMethod::kEuclidean;
  }
  if (o.cut) {
    q.cut = o.cut;
    dq.push_back({"cut", nlohmann::json(*o.cut).dump()});
  }
  if (o.k) {
    q.k = o.k;
    dq.push_back({"k", std::to_string(*o.k)});
  }
  q.max_points = o.max_points;
  dq.push_back({"max_points", std::to_string(o.max_points)});
  q.verbose = o.verbose;
  if (o.verbose) dq.push_back({"verbose", "1"});
  OutlierQuery oq{parse_metric(o.x), parse_metric(o.y), o.alpha};
  if (!(o.alpha > 0 && o.alpha <= 0.5)) throw ValidationError("--alpha must be in (0, 0.5]");
  const std::string outliers_path =
      !o.outliers_out.empty() ? o.outliers_out : o.out_path.empty() ? "" : o.out_path + ".outliers.json";

  std::string diag, outl;
  if (!o.server.empty()) {
    Remote remote(o.server);
    const auto base = "/v1/workloads/" + httplib::detail::encode_query_param(o.workload);
    diag = remote.get(base + "/diagnostics" + query_string(dq));
    if (!outliers_path.empty())
      outl = remote.get(base + "/outliers" +
                        query_string({{"x", o.x}, {"y", o.y}, {"alpha", nlohmann::json(o.alpha).dump()}}));
  } else {
    if (o.trace.empty()) throw ValidationError("--trace or --server is required");
    auto svc = load_service(o.trace, opt_path(o.rules), err);
    diag = svc->diagnostics(o.workload, q);
    if (!outliers_path.empty()) outl = svc->outliers(o.workload, oq);
  }
  emit(o, diag, out);
  if (!outliers_path.empty()) write_file(outliers_path, outl);
  return kExitOk;
}

inline int cmd_layout(const Options& o, std::ostream& out, std::ostream& err) {
  const auto spec = read_file(o.spec_path);
  std::string body;
  if (!o.server.empty()) {
    body = Remote(o.server).post("/v1/layout", spec);
  } else {
    if (o.trace.empty()) throw ValidationError("--trace or --server is required");
    body = load_service(o.trace, opt_path(o.rules), err)->layout(spec);
  }
  emit(o, body, out);
  return kExitOk;
}

// Human-oriented overview of a trace: GPU occupancy, workload states and
// per-rule hit counts.
inline int cmd_report(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.format != "json" && o.format != "table") throw ValidationError("--format must be json or table");
  std::string snapshot, violations;
  if (!o.server.empty()) {
    Remote remote(o.server);
    snapshot = remote.get("/v1/snapshot");
    violations = remote.get("/v1/violations");
  } else {
    if (o.trace.empty()) throw ValidationError("--trace or --server is required");
    auto svc = load_service(o.trace, opt_path(o.rules), err);
    snapshot = svc->snapshot();
    violations = svc->violations();
  }
  const auto s = nlohmann::json::parse(snapshot);
  const auto v = nlohmann::json::parse(violations);
  nlohmann::ordered_json j;
  j["gpus"] = s["units"].size();
  std::map<std::string, std::size_t> by_state, busy_by_partition, gpus_by_partition;
  for (const auto& u : s["units"]) {
    const auto part = u["attributes"]["partition"].get<std::string>();
    ++gpus_by_partition[part];
    if (u["attributes"]["workload_state"] != "idle") ++busy_by_partition[part];
  }
  for (const auto& w : s["workloads"]) ++by_state[w["state"].get<std::string>()];
  j["workloads"] = by_state;
  nlohmann::ordered_json parts = nlohmann::ordered_json::array();
  for (const auto& [p, n] : gpus_by_partition)
    parts.push_back({{"partition", p}, {"gpus", n}, {"busy_gpus", busy_by_partition[p]}});
  j["partitions"] = std::move(parts);
  nlohmann::ordered_json rules = nlohmann::ordered_json::array();
  const auto& m = v["matrix"];
  for (std::size_t c = 0; c < m["rules"].size(); ++c) {
    std::size_t fired = 0;
    for (const auto& row : m["rows"]) fired += row["fired"][c].get<bool>() ? 1 : 0;
    rules.push_back({{"rule_id", m["rules"][c]}, {"ordinal", m["ordinals"][c]}, {"fired_gpus", fired}});
  }
  j["rules"] = std::move(rules);
  if (o.format == "json") {
    emit(o, j.dump() + "\n", out);
    return kExitOk;
  }
  std::ostringstream os;
  os << "GPUs: " << j["gpus"] << '\n' << "Partitions:\n";
  for (const auto& p : j["partitions"])
    os << "  " << std::left << std::setw(16) << p["partition"].get<std::string>() << p["busy_gpus"] << "/"
       << p["gpus"] << " busy\n";
  os << "Workloads:\n";
  for (const auto& [state, n] : by_state) os << "  " << std::setw(16) << state << n << '\n';
  os << "Rules:\n";
  if (j["rules"].empty()) os << "  (none)\n";
  for (const auto& r : j["rules"])
    os << "  #" << r["ordinal"] << ' ' << std::setw(14) << r["rule_id"].get<std::string>() << r["fired_gpus"]
       << " GPUs fired\n";
  emit(o, os.str(), out);
  return kExitOk;
}

// Entry point. Exit codes: 0 ok, 1 usage/validation, 2 runtime failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"GPU cluster monitoring: simulate, ingest, serve, evaluate rules, diagnose."};
  app.require_subcommand(1);
  Options o;

  auto* simulate = app.add_subcommand("simulate", "Run the cluster simulator and write a replayable trace");
  simulate->add_option("--config", o.config_path, "Simulator config JSON")->required();
  simulate->add_option("--seed", o.seed, "Override the config seed");
  simulate->add_option("--out", o.out_path, "Trace NDJSON output")->required();
  simulate->add_option("--summary", o.summary_path, "Summary JSON output (default <out>.summary.json)");
  simulate->add_option("--placement", o.placement, "Override placement policy")
      ->check(CLI::IsMember({"Spread", "MostAllocated"}));
  simulate->add_option("--queue", o.queue, "Override queue policy")->check(CLI::IsMember({"FCFS", "PrioritySize"}));

  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--addr", o.addr, "host:port (default $CLUSTERSCAPE_ADDR or 127.0.0.1:8080)");
  serve->add_option("--trace", o.trace, "Trace to preload");
  serve->add_option("--rules", o.rules, "Rules file (loaded at start, rewritten on change)");
  serve->add_option("--spill", o.spill, "Append accepted samples to this NDJSON file and reload it at start");
  serve->add_option("--tick", o.tick_s, "Violation recompute period in seconds");

  auto* ingest = app.add_subcommand("ingest", "Replay a trace into a server or a local store");
  ingest->add_option("--trace", o.trace, "Trace NDJSON")->required();
  ingest->add_option("--server", o.server, "Server address (default $CLUSTERSCAPE_ADDR)");
  ingest->add_flag("--local", o.local, "Ingest into an in-process store and print the report");
  ingest->add_option("--batch-lines", o.batch_lines, "Lines per request");

  auto* rules = app.add_subcommand("rules", "Manage and evaluate violation rules");
  rules->require_subcommand(1);
  auto* rules_add = rules->add_subcommand("add", "Add or replace a rule");
  rules_add->add_option("--rules", o.rules, "Rules file");
  rules_add->add_option("--rule", o.rule_json, "Rule JSON");
  rules_add->add_option("--rule-file", o.rule_file, "File holding one rule JSON");
  rules_add->add_option("--server", o.server, "Post to a running server instead");
  rules_add->add_option("--out", o.out_path, "Output file (default stdout)");
  auto* rules_list = rules->add_subcommand("list", "List rules");
  rules_list->add_option("--rules", o.rules, "Rules file");
  rules_list->add_option("--server", o.server, "Read from a running server instead");
  rules_list->add_option("--out", o.out_path, "Output file (default stdout)");
  auto* rules_eval = rules->add_subcommand("eval", "Evaluate rules and print the rule hit matrix");
  rules_eval->add_option("--rules", o.rules, "Rules file");
  rules_eval->add_option("--trace", o.trace, "Trace NDJSON");
  rules_eval->add_option("--server", o.server, "Read from a running server instead");
  rules_eval->add_option("--format", o.format, "json or table")->check(CLI::IsMember({"json", "table"}));
  rules_eval->add_option("--group-by", o.group_by, "Unit attribute used for group summaries");
  rules_eval->add_option("--out", o.out_path, "Output file (default stdout)");

  auto* diagnose = app.add_subcommand("diagnose", "Cluster a workload's GPUs and flag bivariate outliers");
  diagnose->add_option("--workload", o.workload, "Workload id")->required();
  diagnose->add_option("--trace", o.trace, "Trace NDJSON");
  diagnose->add_option("--server", o.server, "Read from a running server instead");
  diagnose->add_option("--rules", o.rules, "Rules file (adds rule ordinals per GPU)");
  diagnose->add_option("--metric", o.metric, "Metric to compare");
  diagnose->add_option("--plot", o.plot, "hist or timeline")->check(CLI::IsMember({"hist", "timeline"}));
  diagnose->add_option("--bins", o.bins, "Histogram bins");
  diagnose->add_option("--method", o.method, "Distance for timelines: euclidean or correlation");
  diagnose->add_option("--cut", o.cut, "Dendrogram cut height");
  diagnose->add_option("--k", o.k, "Cut into k clusters instead");
  diagnose->add_option("--max-points", o.max_points, "Timeline points per GPU");
  diagnose->add_flag("--verbose", o.verbose, "Include the distance matrix");
  diagnose->add_option("--x", o.x, "Outlier x metric");
  diagnose->add_option("--y", o.y, "Outlier y metric");
  diagnose->add_option("--alpha", o.alpha, "Outlier significance level");
  diagnose->add_option("--out", o.out_path, "Diagnostics JSON output (default stdout)");
  diagnose->add_option("--outliers-out", o.outliers_out, "Outlier report JSON output (default <out>.outliers.json)");

  auto* layout = app.add_subcommand("layout", "Compute unit layout geometry for a spec");
  layout->add_option("--spec", o.spec_path, "Layout spec JSON")->required();
  layout->add_option("--trace", o.trace, "Trace NDJSON");
  layout->add_option("--server", o.server, "Read from a running server instead");
  layout->add_option("--rules", o.rules, "Rules file (adds rule_<n> attributes)");
  layout->add_option("--out", o.out_path, "Output file (default stdout)");

  auto* report = app.add_subcommand("report", "Summarize cluster occupancy and rule hits");
  report->add_option("--trace", o.trace, "Trace NDJSON");
  report->add_option("--server", o.server, "Read from a running server instead");
  report->add_option("--rules", o.rules, "Rules file");
  report->add_option("--format", o.format, "table or json")->check(CLI::IsMember({"json", "table"}));
  report->add_option("--out", o.out_path, "Output file (default stdout)");
  report->callback([&] {
    if (report->count("--format") == 0) o.format = "table";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  try {
    if (*simulate) return cmd_simulate(o, out);
    if (*serve) return cmd_serve(o, out, err);
    if (*ingest) return cmd_ingest(o, out, err);
    if (*rules_add) return cmd_rules_add(o, out);
    if (*rules_list) return cmd_rules_list(o, out);
    if (*rules_eval) return cmd_rules_eval(o, out, err);
    if (*diagnose) return cmd_diagnose(o, out, err);
    if (*layout) return cmd_layout(o, out, err);
    if (*report) return cmd_report(o, out, err);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NotFoundError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const RuleLimitError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace clusterscape::cli
