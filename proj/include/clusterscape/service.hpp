#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "clusterscape/diagnostics.hpp"
#include "clusterscape/error.hpp"
#include "clusterscape/layout.hpp"
#include "clusterscape/metrics.hpp"
#include "clusterscape/rules.hpp"
#include "clusterscape/sim.hpp"
#include "clusterscape/store.hpp"
#include "clusterscape/topology.hpp"

namespace clusterscape {

// ---------------------------------------------------------------------------
// Snapshot building blocks (pure functions over store + registry + rules)
// ---------------------------------------------------------------------------

// Rank-0 GPU of a workload on one node: its first allocated GPU there.
inline bool is_node_master(const Workload& w, const std::string& gpu, const ClusterTopology& topo) {
  const auto& node = topo.node_of(gpu).node_id;
  for (const auto& g : w.allocated_gpu_uids)
    if (topo.node_of(g).node_id == node) return g == gpu;
  return false;
}

// One UnitRecord per GPU in physical order. Metric attributes hold the latest
// value (0 when the GPU has no data for a metric that exists elsewhere);
// rule_<ordinal> attributes are 1 when the GPU fires that rule.
inline std::vector<UnitRecord> build_units(const MetricsStore& store, const Registry& registry,
                                           const RuleHitMatrix& hits) {
  std::set<Metric> seen;
  for (const auto& [gpu, m] : store.keys()) seen.insert(m);

  std::map<std::string, std::size_t> hit_row;
  for (std::size_t i = 0; i < hits.rows.size(); ++i) hit_row[hits.rows[i].gpu_uid] = i;

  std::vector<UnitRecord> units;
  const auto& topo = registry.topology();
  for (const auto& node : topo.nodes()) {
    const auto* part = topo.find_partition(node.partition_id);
    for (std::size_t g = 0; g < node.gpu_uids.size(); ++g) {
      UnitRecord u;
      u.gpu_uid = node.gpu_uids[g];
      auto& a = u.attributes;
      a["partition"] = node.partition_id;
      a["node"] = node.node_id;
      a["machine_type"] = part ? part->machine_type : std::string("unknown");
      a["gpu_index"] = static_cast<double>(g);
      const Workload* w = registry.workload_on(u.gpu_uid);
      a["workload_id"] = w ? w->workload_id : std::string("-");
      a["workload_state"] = w ? std::string(state_name(w->state)) : std::string("idle");
      a["user"] = w ? w->user : std::string("-");
      a["project"] = w ? w->project : std::string("-");
      a["wait_seconds"] =
          w && w->start_time ? static_cast<double>(*w->start_time - w->submit_time) / 1000.0 : 0.0;
      a["is_master"] = w && is_node_master(*w, u.gpu_uid, topo) ? 1.0 : 0.0;
      for (Metric m : seen) {
        auto p = store.latest(u.gpu_uid, m);
        a[std::string(metric_name(m))] = p ? p->value : 0.0;
      }
      auto row = hit_row.find(u.gpu_uid);
      for (std::size_t c = 0; c < hits.rule_ids.size(); ++c)
        a["rule_" + std::to_string(hits.ordinals[c])] =
            row != hit_row.end() && hits.rows[row->second].fired[c] ? 1.0 : 0.0;
      units.push_back(std::move(u));
    }
  }
  return units;
}

inline nlohmann::ordered_json to_json(const UnitRecord& u) {
  nlohmann::ordered_json j;
  j["gpu"] = u.gpu_uid;
  nlohmann::ordered_json attrs = nlohmann::ordered_json::object();
  for (const auto& [k, v] : u.attributes) {
    if (is_numeric(v)) attrs[k] = std::get<double>(v);
    else attrs[k] = std::get<std::string>(v);
  }
  j["attributes"] = std::move(attrs);
  return j;
}

inline std::string topology_digest(const ClusterTopology& t) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(sim::fnv1a(to_json(t).dump())));
  return buf;
}

struct DiagnosticsQuery {
  Metric metric = Metric::kUtilization;
  enum class Plot { kHist, kTimeline } plot = Plot::kHist;
  std::size_t bins = 20;
  DistanceMethod method = DistanceMethod::kJsd;  // forced to jsd for hist
  std::optional<double> cut;                     // threshold
  std::optional<std::size_t> k;
  std::size_t max_points = 200;
  bool verbose = false;
};

struct OutlierQuery {
  Metric x = Metric::kUtilization;
  Metric y = Metric::kPower;
  double alpha = 0.01;
};

inline constexpr std::size_t kDefaultHistogramBins = 20;
// Default cut for euclidean timelines, relative to the largest pairwise distance.
inline constexpr double kEuclideanRelativeCut = 0.25;

struct ServiceOptions {
  StoreConfig store;
  std::optional<std::string> rules_path;  // loaded on startup, rewritten on every rule change
};

// The engine behind both the HTTP API and the CLI. Every read returns a
// complete response body, so identical state yields identical bytes.
class Service {
 public:
  Service() : Service(ServiceOptions{}) {}
  explicit Service(ServiceOptions opts) : opts_(std::move(opts)), store_(opts_.store) {
    if (opts_.store.spill_path) store_.load_spill(*opts_.store.spill_path);
    if (opts_.rules_path) {
      std::ifstream probe(*opts_.rules_path);
      if (probe) rules_ = RuleSet::load(*opts_.rules_path);
    }
  }

  std::uint64_t snapshot_id() const {
    std::shared_lock lock(mu_);
    return snapshot_;
  }

  // ---- writes ------------------------------------------------------------

  IngestReport ingest(std::string_view ndjson) {
    IngestReport report;
    {
      std::unique_lock lock(mu_);
      std::size_t line_no = 0;
      while (!ndjson.empty()) {
        auto nl = ndjson.find('\n');
        auto line = ndjson.substr(0, nl);
        ndjson = nl == std::string_view::npos ? std::string_view{} : ndjson.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        try {
          ingest_record(store_, registry_, line);
          ++report.accepted;
        } catch (const Error& e) {
          ++report.rejected;
          if (report.errors.size() < 20)
            report.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
      }
      if (report.accepted > 0) ++snapshot_;
    }
    if (report.accepted > 0) changed_.notify_all();
    return report;
  }

  std::string add_rule(std::string_view body) {
    const auto rule = rule_from_json(parse_body(body));
    std::string out;
    {
      std::unique_lock lock(mu_);
      RuleSet next = rules_;
      const auto& stored = next.upsert(rule);
      out = dump(to_json(stored));
      if (opts_.rules_path) next.save(*opts_.rules_path);
      rules_ = std::move(next);
      ++snapshot_;
    }
    changed_.notify_all();
    return out;
  }

  void delete_rule(const std::string& id) {
    {
      std::unique_lock lock(mu_);
      RuleSet next = rules_;
      if (!next.remove(id)) throw NotFoundError("unknown rule: " + id);
      if (opts_.rules_path) next.save(*opts_.rules_path);
      rules_ = std::move(next);
      ++snapshot_;
    }
    changed_.notify_all();
  }

  // ---- reads -------------------------------------------------------------

  std::string snapshot(std::uint64_t* at = nullptr) const {
    std::shared_lock lock(mu_);
    stamp(at);
    nlohmann::ordered_json j;
    j["snapshot_id"] = snapshot_;
    j["now"] = registry_.clock();
    j["topology_digest"] = topology_digest(registry_.topology());
    auto units = nlohmann::ordered_json::array();
    for (const auto& u : units_locked()) units.push_back(to_json(u));
    j["units"] = std::move(units);

    // Waiting pool ordered by priority score (desc), then submit time.
    std::vector<const Workload*> waiting;
    for (const auto& w : registry_.workloads())
      if (w.state == WorkloadState::kWaiting) waiting.push_back(&w);
    std::stable_sort(waiting.begin(), waiting.end(), [](const Workload* a, const Workload* b) {
      if (a->priority_score != b->priority_score) return a->priority_score > b->priority_score;
      return a->submit_time < b->submit_time;
    });
    std::map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < waiting.size(); ++i) position[waiting[i]->workload_id] = i + 1;
    auto wl = nlohmann::ordered_json::array();
    for (const auto& w : registry_.workloads()) {
      auto wj = to_json(w);
      auto it = position.find(w.workload_id);
      wj["queue_position"] = it == position.end() ? nlohmann::ordered_json(nullptr)
                                                  : nlohmann::ordered_json(it->second);
      wl.push_back(std::move(wj));
    }
    j["workloads"] = std::move(wl);
    return dump(j);
  }

  std::string rules(std::uint64_t* at = nullptr) const {
    std::shared_lock lock(mu_);
    stamp(at);
    return dump(rules_.to_json());
  }

  // Body: a LayoutSpec document, optionally carrying "filters" and "color".
  std::string layout(std::string_view body, std::uint64_t* at = nullptr) const {
    const auto j = parse_body(body);
    const auto spec = layout_spec_from_json(j);
    std::vector<FilterPredicate> filters;
    if (j.contains("filters"))
      for (const auto& f : j["filters"]) filters.push_back(filter_from_json(f));
    std::optional<ColorScaleSpec> color;
    if (j.contains("color") && !j["color"].is_null()) color = color_spec_from_json(j["color"]);

    std::shared_lock lock(mu_);
    stamp(at);
    const auto units = units_locked();
    const auto retained = apply_filters(units, filters);
    const auto geo = compute_layout(retained, spec);
    auto out = to_json(geo);
    if (color) {
      const auto colors = resolve_colors(units, *color, filters);
      nlohmann::ordered_json cj = nlohmann::ordered_json::object();
      for (const auto& u : retained) cj[u.gpu_uid] = colors.at(u.gpu_uid);
      out["colors"] = std::move(cj);
    } else {
      out["colors"] = nullptr;
    }
    return dump(out);
  }

  // Rule hit matrix plus per-group summaries; groups are values of the
  // `group_by` unit attribute (default: workload).
  std::string violations(std::optional<std::uint64_t> at_snapshot = std::nullopt,
                         const std::string& group_by = "workload_id",
                         std::uint64_t* at = nullptr) const {
    std::shared_lock lock(mu_);
    stamp(at);
    if (at_snapshot && *at_snapshot != snapshot_)
      throw NotFoundError("snapshot " + std::to_string(*at_snapshot) + " not available");
    {
      std::lock_guard cache_lock(cache_mu_);
      auto it = violations_cache_.find(group_by);
      if (it != violations_cache_.end() && it->second.first == snapshot_) return it->second.second;
    }
    const auto hits = hits_locked();
    const auto units = build_units(store_, registry_, hits);
    std::map<std::string, std::string> membership;
    for (const auto& u : units) {
      const auto* v = u.find(group_by);
      if (!v) throw ValidationError("unknown group_by attribute: " + group_by);
      membership[u.gpu_uid] = attr_to_string(*v);
    }
    nlohmann::ordered_json j;
    j["now"] = registry_.clock();
    j["group_by"] = group_by;
    j["matrix"] = to_json(hits);
    auto groups = nlohmann::ordered_json::array();
    for (const auto& g : summarize_group(hits, membership)) groups.push_back(to_json(g));
    j["groups"] = std::move(groups);
    auto body = dump(j);
    std::lock_guard cache_lock(cache_mu_);
    violations_cache_[group_by] = {snapshot_, body};
    return body;
  }

  std::string diagnostics(const std::string& workload_id, const DiagnosticsQuery& q,
                          std::uint64_t* at = nullptr) const {
    std::shared_lock lock(mu_);
    stamp(at);
    const Workload& w = started_workload(workload_id);
    const auto [from, to] = window_of(w);
    const auto& gpus = w.allocated_gpu_uids;

    std::vector<MetricSeries> series;
    for (const auto& g : gpus) series.push_back(series_or_empty(g, q.metric, from, to));

    const bool hist = q.plot == DiagnosticsQuery::Plot::kHist;
    const DistanceMethod method = hist ? DistanceMethod::kJsd : q.method;
    if (!hist && method == DistanceMethod::kJsd)
      throw ValidationError("timeline plots use euclidean or correlation distance");
    if (q.bins < 1) throw ValidationError("bins must be >= 1");

    // Histograms share one domain so JSD is defined between any pair.
    std::vector<Histogram> hists;
    if (hist) {
      std::optional<Domain> domain = default_domain(q.metric);
      if (!domain) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& s : series)
          for (const auto& p : s.points) {
            lo = std::min(lo, p.value);
            hi = std::max(hi, p.value);
          }
        if (lo <= hi) domain = Domain{lo, hi};
      }
      for (const auto& s : series) {
        const auto vals = values_of(s.points);
        hists.push_back(build_histogram(std::span<const double>(vals), q.bins, domain));
      }
    }

    // GPUs without usable data are reported separately instead of clustered.
    std::vector<std::size_t> usable;
    std::vector<std::string> not_evaluable;
    for (std::size_t i = 0; i < gpus.size(); ++i) {
      bool ok = hist ? !hists[i].empty : series[i].size() >= 2;
      if (ok && method == DistanceMethod::kCorrelation) {
        const auto [mn, mx] = std::minmax_element(series[i].points.begin(), series[i].points.end(),
                                                  [](const Point& a, const Point& b) { return a.value < b.value; });
        ok = mn->value != mx->value;
      }
      if (ok) usable.push_back(i);
      else not_evaluable.push_back(gpus[i]);
    }
    std::vector<std::string> labels;
    for (std::size_t i : usable) labels.push_back(gpus[i]);
    const double fallback = method == DistanceMethod::kJsd ? 1.0 : method == DistanceMethod::kCorrelation ? 2.0 : 0.0;
    const auto matrix = build_distance_matrix(
        labels, method,
        [&](std::size_t a, std::size_t b) -> std::optional<double> {
          if (hist) return jsd_distance(hists[usable[a]], hists[usable[b]]);
          return series_distance(series[usable[a]], series[usable[b]], method);
        },
        fallback);

    ClusterCut cut;
    if (q.k) {
      cut = ClusterCut::at_k(std::min(*q.k, std::max<std::size_t>(labels.size(), 1)));
    } else if (q.cut) {
      cut = ClusterCut::at_threshold(*q.cut);
    } else if (method == DistanceMethod::kEuclidean) {
      double largest = 0;
      for (const auto& row : matrix.d)
        for (double v : row) largest = std::max(largest, v);
      cut = largest > 0 ? ClusterCut::at_threshold(kEuclideanRelativeCut * largest) : ClusterCut::at_k(1);
    } else {
      cut = ClusterCut::at_threshold(kDefaultJsdCut);
    }
    const auto assignment = agglomerative_cluster(matrix, cut);
    const auto colors = cluster_colors(assignment);
    std::map<std::string, int> cluster_of;
    for (std::size_t i = 0; i < assignment.labels.size(); ++i)
      cluster_of[assignment.labels[i]] = assignment.cluster_of[i];

    const auto hits = hits_locked();
    std::map<std::string, std::vector<int>> fired_ordinals;
    for (const auto& row : hits.rows)
      for (std::size_t c = 0; c < hits.rule_ids.size(); ++c)
        if (row.fired[c]) fired_ordinals[row.gpu_uid].push_back(hits.ordinals[c]);

    nlohmann::ordered_json j;
    j["workload_id"] = w.workload_id;
    j["metric"] = metric_name(q.metric);
    j["plot"] = hist ? "hist" : "timeline";
    j["method"] = method_name(method);
    j["window"] = {from, to};
    if (hist) j["bins"] = q.bins;
    j["clusters"] = to_json(assignment);
    nlohmann::ordered_json palette = nlohmann::ordered_json::object();
    for (const auto& [id, c] : colors) palette[std::to_string(id)] = c;
    j["cluster_colors"] = std::move(palette);
    auto multiples = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < gpus.size(); ++i) {
      nlohmann::ordered_json m;
      m["gpu"] = gpus[i];
      m["node"] = registry_.topology().node_of(gpus[i]).node_id;
      auto it = cluster_of.find(gpus[i]);
      m["cluster_id"] = it == cluster_of.end() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(it->second);
      m["color"] = it == cluster_of.end() ? nlohmann::ordered_json(nullptr)
                                          : nlohmann::ordered_json(colors.at(it->second));
      if (hist) m["histogram"] = to_json(hists[i]);
      else m["timeline"] = to_json(downsample(series[i], q.max_points))["points"];
      auto fo = fired_ordinals.find(gpus[i]);
      m["rule_ordinals"] = fo == fired_ordinals.end() ? std::vector<int>{} : fo->second;
      multiples.push_back(std::move(m));
    }
    j["multiples"] = std::move(multiples);
    j["not_evaluable"] = not_evaluable;
    if (q.verbose) j["matrix"] = to_json(matrix);
    return dump(j);
  }

  std::string timeline(const std::string& workload_id, Metric metric, std::optional<Timestamp> from,
                       std::optional<Timestamp> to, std::size_t max_points,
                       std::uint64_t* at = nullptr) const {
    std::shared_lock lock(mu_);
    stamp(at);
    const Workload& w = started_workload(workload_id);
    const auto [wf, wt] = window_of(w);
    const Timestamp a = from.value_or(wf);
    const Timestamp b = to.value_or(wt);
    if (a > b) throw ValidationError("from > to");
    nlohmann::ordered_json j;
    j["workload_id"] = w.workload_id;
    j["metric"] = metric_name(metric);
    j["window"] = {a, b};
    j["max_points"] = max_points;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& g : w.allocated_gpu_uids) arr.push_back(to_json(downsample(series_or_empty(g, metric, a, b), max_points)));
    j["series"] = std::move(arr);
    return dump(j);
  }

  // Points are (timestamp, x, y) for every GPU at timestamps where both
  // metrics were scraped.
  std::string outliers(const std::string& workload_id, const OutlierQuery& q,
                       std::uint64_t* at = nullptr) const {
    std::shared_lock lock(mu_);
    stamp(at);
    const Workload& w = started_workload(workload_id);
    const auto [from, to] = window_of(w);
    std::vector<BivariatePoint> pts;
    for (const auto& g : w.allocated_gpu_uids) {
      const auto xs = series_or_empty(g, q.x, from, to);
      const auto ys = series_or_empty(g, q.y, from, to);
      std::size_t i = 0, k = 0;
      while (i < xs.points.size() && k < ys.points.size()) {
        if (xs.points[i].ts < ys.points[k].ts) ++i;
        else if (ys.points[k].ts < xs.points[i].ts) ++k;
        else {
          pts.push_back({xs.points[i].ts, xs.points[i].value, ys.points[k].value, g});
          ++i;
          ++k;
        }
      }
    }
    auto report = mahalanobis_outliers(pts, q.alpha);
    report.metric_x = metric_name(q.x);
    report.metric_y = metric_name(q.y);
    nlohmann::ordered_json j;
    j["workload_id"] = w.workload_id;
    j["report"] = to_json(report);
    return dump(j);
  }

  // Blocks until the snapshot id differs from `seen` or the timeout passes.
  std::uint64_t wait_for_change(std::uint64_t seen, std::chrono::milliseconds timeout) const {
    std::shared_lock lock(mu_);
    changed_.wait_for(lock, timeout, [&] { return snapshot_ != seen; });
    return snapshot_;
  }

  void notify_all() const { changed_.notify_all(); }

 private:
  void stamp(std::uint64_t* at) const {
    if (at) *at = snapshot_;
  }

  static nlohmann::json parse_body(std::string_view body) {
    try {
      return nlohmann::json::parse(body.begin(), body.end());
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("malformed JSON body", e.byte == 0 ? 0 : e.byte - 1);
    }
  }

  static std::string dump(const nlohmann::ordered_json& j) { return j.dump() + "\n"; }

  RuleHitMatrix hits_locked() const {
    return evaluate_ruleset(rules_.rules(), registry_.workloads(), store_, registry_.clock());
  }

  std::vector<UnitRecord> units_locked() const { return build_units(store_, registry_, hits_locked()); }

  const Workload& started_workload(const std::string& id) const {
    const Workload* w = registry_.find(id);
    if (!w) throw NotFoundError("unknown workload: " + id);
    if (!w->start_time) throw ValidationError("workload " + id + " has not started");
    return *w;
  }

  std::pair<Timestamp, Timestamp> window_of(const Workload& w) const {
    const Timestamp now = registry_.clock();
    const Timestamp end = w.end_time ? std::min(now, *w.end_time) : now;
    return {*w.start_time, std::max(end, *w.start_time)};
  }

  MetricSeries series_or_empty(const std::string& gpu, Metric m, Timestamp from, Timestamp to) const {
    if (!store_.knows_gpu(gpu)) return MetricSeries{gpu, m, {}};
    return store_.query_series(gpu, m, from, to);
  }

  ServiceOptions opts_;
  mutable std::shared_mutex mu_;
  mutable std::condition_variable_any changed_;
  MetricsStore store_;
  Registry registry_;
  RuleSet rules_;
  std::uint64_t snapshot_ = 0;

  mutable std::mutex cache_mu_;
  mutable std::map<std::string, std::pair<std::uint64_t, std::string>> violations_cache_;
};

}  // namespace clusterscape
