#pragma once

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clusterscape/error.hpp"
#include "clusterscape/metrics.hpp"
#include "clusterscape/topology.hpp"

namespace clusterscape {

struct StoreConfig {
  Timestamp retention_ms = 7LL * 24 * 3600 * 1000;
  Timestamp reorder_window_ms = 60 * 1000;
  std::optional<std::string> spill_path;  // append-only NDJSON copy of accepted samples
};

// Per-(gpu, metric) series with bounded out-of-order tolerance and duration
// based ring eviction. Not synchronized; ClusterState provides locking.
class MetricsStore {
 public:
  MetricsStore() = default;
  explicit MetricsStore(StoreConfig config) : config_(std::move(config)) {
    if (config_.spill_path) spill_.open(*config_.spill_path, std::ios::app);
  }
  MetricsStore(MetricsStore&&) = default;
  MetricsStore& operator=(MetricsStore&&) = default;

  const StoreConfig& config() const { return config_; }

  void register_gpu(const std::string& gpu_uid) { known_gpus_.insert(gpu_uid); }
  bool knows_gpu(const std::string& gpu_uid) const { return known_gpus_.count(gpu_uid) != 0; }

  // Throws ValidationError for values outside the metric's range, arrivals
  // older than the reorder window, or duplicate timestamps.
  void ingest_sample(const MetricSample& s) {
    check_metric_value(s.metric, s.value);
    if (s.ts <= 0) throw ValidationError("timestamp must be positive");
    auto& pts = series_[{s.gpu_uid, s.metric}];
    if (!pts.empty()) {
      const Timestamp newest = pts.back().ts;
      if (s.ts < newest - config_.reorder_window_ms)
        throw ValidationError("sample older than reorder window");
      auto it = std::lower_bound(pts.begin(), pts.end(), s.ts,
                                 [](const Point& p, Timestamp t) { return p.ts < t; });
      if (it != pts.end() && it->ts == s.ts) throw ValidationError("duplicate timestamp");
      pts.insert(it, Point{s.ts, s.value});
    } else {
      pts.push_back(Point{s.ts, s.value});
    }
    known_gpus_.insert(s.gpu_uid);
    latest_ts_ = std::max(latest_ts_, s.ts);
    const Timestamp horizon = pts.back().ts - config_.retention_ms;
    while (!pts.empty() && pts.front().ts < horizon) pts.pop_front();
    if (spill_.is_open()) spill_ << serialize_sample(s) << '\n';
    ++sample_count_;
  }

  void ingest_line(std::string_view line) { ingest_sample(parse_sample_line(line)); }

  MetricSeries query_series(const std::string& gpu_uid, Metric metric, Timestamp t_start,
                            Timestamp t_end) const {
    if (t_start > t_end) throw ValidationError("t_start > t_end");
    if (!knows_gpu(gpu_uid)) throw NotFoundError("unknown gpu: " + gpu_uid);
    MetricSeries out{gpu_uid, metric, {}};
    auto it = series_.find({gpu_uid, metric});
    if (it == series_.end()) return out;
    const auto& pts = it->second;
    auto lo = std::lower_bound(pts.begin(), pts.end(), t_start,
                               [](const Point& p, Timestamp t) { return p.ts < t; });
    auto hi = std::upper_bound(pts.begin(), pts.end(), t_end,
                               [](Timestamp t, const Point& p) { return t < p.ts; });
    out.points.assign(lo, hi);
    return out;
  }

  MetricSeries full_series(const std::string& gpu_uid, Metric metric) const {
    return query_series(gpu_uid, metric, std::numeric_limits<Timestamp>::min(),
                        std::numeric_limits<Timestamp>::max());
  }

  std::optional<Point> latest(const std::string& gpu_uid, Metric metric) const {
    auto it = series_.find({gpu_uid, metric});
    if (it == series_.end() || it->second.empty()) return std::nullopt;
    return it->second.back();
  }

  // Keys in (gpu, metric) order.
  std::vector<std::pair<std::string, Metric>> keys() const {
    std::vector<std::pair<std::string, Metric>> out;
    for (const auto& [k, v] : series_) out.push_back(k);
    return out;
  }

  Timestamp latest_timestamp() const { return latest_ts_; }
  std::size_t accepted_samples() const { return sample_count_; }

  // Replays an NDJSON spill file; lines that fail validation are skipped.
  std::size_t load_spill(const std::string& path) {
    std::ifstream in(path);
    if (!in) return 0;
    const bool was_open = spill_.is_open();
    if (was_open) spill_.close();
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        ingest_line(line);
        ++n;
      } catch (const Error&) {
      }
    }
    if (was_open) spill_.open(*config_.spill_path, std::ios::app);
    return n;
  }

 private:
  StoreConfig config_;
  std::map<std::pair<std::string, Metric>, std::deque<Point>> series_;
  std::set<std::string> known_gpus_;
  Timestamp latest_ts_ = 0;
  std::size_t sample_count_ = 0;
  std::ofstream spill_;
};

// ---------------------------------------------------------------------------
// Registry events
// ---------------------------------------------------------------------------

inline std::string serialize_partition_event(const Partition& p) {
  nlohmann::ordered_json j;
  j["event"] = "partition";
  j["partition_id"] = p.partition_id;
  j["machine_type"] = p.machine_type;
  j["allowed_max_gpus_per_workload"] = p.allowed_max_gpus_per_workload == kUnboundedGpus
                                           ? nlohmann::ordered_json(nullptr)
                                           : nlohmann::ordered_json(p.allowed_max_gpus_per_workload);
  return j.dump();
}

inline std::string serialize_node_event(const Node& n) {
  nlohmann::ordered_json j;
  j["event"] = "node";
  j["node_id"] = n.node_id;
  j["partition_id"] = n.partition_id;
  j["gpu_uids"] = n.gpu_uids;
  return j.dump();
}

inline std::string serialize_submit_event(const Workload& w) {
  nlohmann::ordered_json j;
  j["event"] = "workload_submit";
  j["time"] = w.submit_time;
  j["workload_id"] = w.workload_id;
  j["user"] = w.user;
  j["project"] = w.project;
  j["machine_type"] = w.resource.machine_type;
  j["gpu_count"] = w.resource.gpu_count;
  j["priority_score"] = w.priority_score;
  return j.dump();
}

inline std::string serialize_start_event(const Workload& w) {
  nlohmann::ordered_json j;
  j["event"] = "workload_start";
  j["time"] = w.start_time.value_or(0);
  j["workload_id"] = w.workload_id;
  j["gpu_uids"] = w.allocated_gpu_uids;
  j["master_gpu_uid"] =
      w.master_gpu_uid ? nlohmann::ordered_json(*w.master_gpu_uid) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

inline std::string serialize_end_event(const Workload& w) {
  nlohmann::ordered_json j;
  j["event"] = "workload_end";
  j["time"] = w.end_time.value_or(0);
  j["workload_id"] = w.workload_id;
  j["state"] = state_name(w.state);
  return j.dump();
}

namespace detail {

template <class T>
T require(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("missing key '") + key + "'");
  try {
    return j[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("bad type for '") + key + "'");
  }
}

}  // namespace detail

// Topology and workload lifecycle registry. Not synchronized.
class Registry {
 public:
  const ClusterTopology& topology() const { return topology_; }
  ClusterTopology& topology() { return topology_; }

  // Workloads in submission order.
  const std::vector<Workload>& workloads() const { return workloads_; }

  const Workload* find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &workloads_[it->second];
  }

  const Workload* workload_on(const std::string& gpu_uid) const {
    auto it = gpu_owner_.find(gpu_uid);
    return it == gpu_owner_.end() ? nullptr : &workloads_[it->second];
  }

  Timestamp clock() const { return clock_; }

  void apply(const nlohmann::json& j) {
    using detail::require;
    const auto kind = require<std::string>(j, "event");
    if (kind == "partition") {
      Partition p;
      p.partition_id = require<std::string>(j, "partition_id");
      p.machine_type = require<std::string>(j, "machine_type");
      if (j.contains("allowed_max_gpus_per_workload") &&
          !j["allowed_max_gpus_per_workload"].is_null())
        p.allowed_max_gpus_per_workload = require<int>(j, "allowed_max_gpus_per_workload");
      if (auto* existing = topology_.find_partition(p.partition_id)) {
        if (!(*existing == p)) throw ValidationError("conflicting partition " + p.partition_id);
        return;
      }
      topology_.add_partition(std::move(p));
    } else if (kind == "node") {
      Node n;
      n.node_id = require<std::string>(j, "node_id");
      n.partition_id = require<std::string>(j, "partition_id");
      n.gpu_uids = require<std::vector<std::string>>(j, "gpu_uids");
      for (const auto& existing : topology_.nodes())
        if (existing.node_id == n.node_id) {
          if (!(existing == n)) throw ValidationError("conflicting node " + n.node_id);
          return;
        }
      topology_.add_node(std::move(n));
    } else if (kind == "workload_submit") {
      Workload w;
      w.workload_id = require<std::string>(j, "workload_id");
      if (index_.count(w.workload_id))
        throw ValidationError("duplicate workload: " + w.workload_id);
      w.submit_time = require<Timestamp>(j, "time");
      w.user = require<std::string>(j, "user");
      w.project = require<std::string>(j, "project");
      w.resource.machine_type = require<std::string>(j, "machine_type");
      w.resource.gpu_count = require<int>(j, "gpu_count");
      if (w.resource.gpu_count < 1) throw ValidationError("gpu_count must be >= 1");
      if (j.contains("priority_score")) w.priority_score = require<double>(j, "priority_score");
      advance(w.submit_time);
      index_[w.workload_id] = workloads_.size();
      workloads_.push_back(std::move(w));
    } else if (kind == "workload_start") {
      auto& w = mutable_workload(require<std::string>(j, "workload_id"));
      if (w.state != WorkloadState::kWaiting)
        throw ValidationError("workload " + w.workload_id + " is not waiting");
      const auto t = require<Timestamp>(j, "time");
      if (t < w.submit_time) throw ValidationError("start before submit");
      auto gpus = require<std::vector<std::string>>(j, "gpu_uids");
      if (static_cast<int>(gpus.size()) != w.resource.gpu_count)
        throw ValidationError("allocation size differs from requested gpu_count");
      for (const auto& g : gpus) {
        if (!topology_.has_gpu(g)) throw ValidationError("unknown gpu in allocation: " + g);
        if (gpu_owner_.count(g)) throw ValidationError("gpu already allocated: " + g);
      }
      const std::size_t idx = index_.at(w.workload_id);
      for (const auto& g : gpus) gpu_owner_[g] = idx;
      w.allocated_gpu_uids = std::move(gpus);
      if (j.contains("master_gpu_uid") && !j["master_gpu_uid"].is_null())
        w.master_gpu_uid = require<std::string>(j, "master_gpu_uid");
      w.start_time = t;
      w.state = WorkloadState::kRunning;
      advance(t);
    } else if (kind == "workload_end") {
      auto& w = mutable_workload(require<std::string>(j, "workload_id"));
      if (w.state != WorkloadState::kRunning)
        throw ValidationError("workload " + w.workload_id + " is not running");
      const auto t = require<Timestamp>(j, "time");
      if (t < *w.start_time) throw ValidationError("end before start");
      const auto st = parse_state(j.contains("state") ? require<std::string>(j, "state") : "finished");
      if (st != WorkloadState::kFinished && st != WorkloadState::kFailed)
        throw ValidationError("end state must be finished or failed");
      for (const auto& g : w.allocated_gpu_uids) gpu_owner_.erase(g);
      w.end_time = t;
      w.state = st;
      advance(t);
    } else {
      throw ValidationError("unknown event: " + kind);
    }
  }

  void advance(Timestamp t) { clock_ = std::max(clock_, t); }

 private:
  Workload& mutable_workload(const std::string& id) {
    auto it = index_.find(id);
    if (it == index_.end()) throw NotFoundError("unknown workload: " + id);
    return workloads_[it->second];
  }

  ClusterTopology topology_;
  std::vector<Workload> workloads_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::size_t> gpu_owner_;
  Timestamp clock_ = 0;
};

struct IngestReport {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::vector<std::string> errors;  // first few, "line N: message"
};

inline nlohmann::ordered_json to_json(const IngestReport& r) {
  nlohmann::ordered_json j;
  j["accepted"] = r.accepted;
  j["rejected"] = r.rejected;
  j["errors"] = r.errors;
  return j;
}

// Dispatches one NDJSON record: registry events carry an "event" key,
// everything else is an exporter sample.
inline void ingest_record(MetricsStore& store, Registry& registry, std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line.begin(), line.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed record", e.byte == 0 ? 0 : e.byte - 1);
  }
  if (j.is_object() && j.contains("event")) {
    registry.apply(j);
    if (j["event"] == "node")
      for (const auto& g : j["gpu_uids"]) store.register_gpu(g.get<std::string>());
  } else {
    auto s = sample_from_json(j);
    store.ingest_sample(s);
    registry.advance(s.ts);
  }
}

// Store + registry behind one reader/writer lock: a single writer ingests,
// readers take a shared lock and see a consistent snapshot.
class ClusterState {
 public:
  ClusterState() = default;
  explicit ClusterState(StoreConfig config) : store_(std::move(config)) {}

  IngestReport ingest_ndjson(std::string_view body, std::size_t max_errors = 20) {
    std::unique_lock lock(mutex_);
    IngestReport report;
    std::size_t line_no = 0;
    while (!body.empty()) {
      auto nl = body.find('\n');
      auto line = body.substr(0, nl);
      body = nl == std::string_view::npos ? std::string_view{} : body.substr(nl + 1);
      ++line_no;
      if (line.empty() || line == "\r") continue;
      try {
        ingest_record(store_, registry_, line);
        ++report.accepted;
      } catch (const Error& e) {
        ++report.rejected;
        if (report.errors.size() < max_errors)
          report.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (report.accepted > 0) ++version_;
    return report;
  }

  template <class Fn>
  auto read(Fn&& fn) const {
    std::shared_lock lock(mutex_);
    return fn(store_, registry_, version_);
  }

  template <class Fn>
  auto write(Fn&& fn) {
    std::unique_lock lock(mutex_);
    ++version_;
    return fn(store_, registry_);
  }

  // Number of committed state changes; 0 for an empty system.
  std::uint64_t version() const {
    std::shared_lock lock(mutex_);
    return version_;
  }

 private:
  mutable std::shared_mutex mutex_;
  MetricsStore store_;
  Registry registry_;
  std::uint64_t version_ = 0;
};

}  // namespace clusterscape
