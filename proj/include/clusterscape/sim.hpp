#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "clusterscape/error.hpp"
#include "clusterscape/metrics.hpp"
#include "clusterscape/store.hpp"
#include "clusterscape/topology.hpp"

namespace clusterscape::sim {

enum class PlacementPolicy { kSpread, kMostAllocated };
enum class QueuePolicy { kFcfs, kPrioritySize };
enum class ScenarioKind { kHealthy, kStalled, kImbalance, kIdle };

inline std::string_view placement_name(PlacementPolicy p) {
  return p == PlacementPolicy::kSpread ? "Spread" : "MostAllocated";
}
inline std::string_view queue_name(QueuePolicy q) { return q == QueuePolicy::kFcfs ? "FCFS" : "PrioritySize"; }

inline std::string_view scenario_name(ScenarioKind s) {
  switch (s) {
    case ScenarioKind::kHealthy: return "healthy";
    case ScenarioKind::kStalled: return "stalled";
    case ScenarioKind::kImbalance: return "imbalance";
    case ScenarioKind::kIdle: return "idle";
  }
  return "?";
}

inline ScenarioKind parse_scenario(std::string_view s) {
  for (auto k : {ScenarioKind::kHealthy, ScenarioKind::kStalled, ScenarioKind::kImbalance, ScenarioKind::kIdle})
    if (scenario_name(k) == s) return k;
  throw ValidationError("unknown scenario: " + std::string(s));
}

struct PartitionConfig {
  std::string partition_id;
  std::string machine_type = "A100";
  int nodes = 1;
  int allowed_max_gpus_per_workload = kUnboundedGpus;
};

// Poisson arrivals of one resource type with log-normal durations.
struct ArrivalClass {
  std::string machine_type = "A100";
  int gpu_count = 1;
  double rate_per_hour = 1.0;
  double duration_median_s = 3600.0;
  double duration_sigma = 1.0;
};

struct InjectedWorkload {
  std::string workload_id;
  std::string user = "user00";
  std::string project = "proj00";
  std::string machine_type = "A100";
  int gpu_count = 8;
  double submit_s = 0.0;
  double duration_s = 3600.0;
  ScenarioKind scenario = ScenarioKind::kHealthy;
};

struct MetricsConfig {
  bool enabled = false;  // synthesize samples for random arrivals too
  std::vector<Metric> metrics = {Metric::kUtilization, Metric::kPower};
  ScenarioKind default_scenario = ScenarioKind::kHealthy;
};

struct SimConfig {
  std::uint64_t seed = 1;
  std::vector<PartitionConfig> partitions;
  std::vector<ArrivalClass> arrivals;
  std::vector<InjectedWorkload> injected;
  PlacementPolicy placement = PlacementPolicy::kSpread;
  QueuePolicy queue = QueuePolicy::kFcfs;
  double scrape_interval_s = 5.0;
  double duration_s = 24 * 3600.0;
  bool drain = false;  // keep running past duration until every job finished
  double fragmentation_interval_s = 3600.0;
  Timestamp epoch_ms = 1'700'000'000'000;
  int users = 20;
  int projects = 8;
  MetricsConfig metrics;
};

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

inline SimConfig config_from_json(const nlohmann::json& j) {
  SimConfig c;
  try {
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    for (const auto& p : j.at("partitions")) {
      PartitionConfig pc;
      pc.partition_id = p.at("partition_id").get<std::string>();
      if (p.contains("machine_type")) pc.machine_type = p["machine_type"].get<std::string>();
      pc.nodes = p.at("nodes").get<int>();
      if (p.contains("allowed_max_gpus_per_workload") && !p["allowed_max_gpus_per_workload"].is_null())
        pc.allowed_max_gpus_per_workload = p["allowed_max_gpus_per_workload"].get<int>();
      if (pc.nodes < 1) throw ValidationError("partition needs at least one node");
      tdp_watts(pc.machine_type);
      c.partitions.push_back(pc);
    }
    if (j.contains("arrivals"))
      for (const auto& a : j["arrivals"]) {
        ArrivalClass ac;
        if (a.contains("machine_type")) ac.machine_type = a["machine_type"].get<std::string>();
        ac.gpu_count = a.at("gpu_count").get<int>();
        ac.rate_per_hour = a.at("rate_per_hour").get<double>();
        if (a.contains("duration_median_s")) ac.duration_median_s = a["duration_median_s"].get<double>();
        if (a.contains("duration_sigma")) ac.duration_sigma = a["duration_sigma"].get<double>();
        if (!(ac.rate_per_hour >= 0) || !(ac.duration_median_s > 0) || !(ac.duration_sigma >= 0))
          throw ValidationError("invalid arrival class");
        c.arrivals.push_back(ac);
      }
    if (j.contains("injected"))
      for (const auto& w : j["injected"]) {
        InjectedWorkload iw;
        iw.workload_id = w.at("workload_id").get<std::string>();
        if (w.contains("user")) iw.user = w["user"].get<std::string>();
        if (w.contains("project")) iw.project = w["project"].get<std::string>();
        if (w.contains("machine_type")) iw.machine_type = w["machine_type"].get<std::string>();
        iw.gpu_count = w.at("gpu_count").get<int>();
        if (w.contains("submit_s")) iw.submit_s = w["submit_s"].get<double>();
        if (w.contains("duration_s")) iw.duration_s = w["duration_s"].get<double>();
        if (w.contains("scenario")) iw.scenario = parse_scenario(w["scenario"].get<std::string>());
        c.injected.push_back(iw);
      }
    if (j.contains("placement")) {
      const auto p = j["placement"].get<std::string>();
      if (p == "Spread") c.placement = PlacementPolicy::kSpread;
      else if (p == "MostAllocated") c.placement = PlacementPolicy::kMostAllocated;
      else throw ValidationError("unknown placement policy: " + p);
    }
    if (j.contains("queue")) {
      const auto q = j["queue"].get<std::string>();
      if (q == "FCFS") c.queue = QueuePolicy::kFcfs;
      else if (q == "PrioritySize") c.queue = QueuePolicy::kPrioritySize;
      else throw ValidationError("unknown queue policy: " + q);
    }
    if (j.contains("scrape_interval_s")) c.scrape_interval_s = j["scrape_interval_s"].get<double>();
    if (j.contains("duration_s")) c.duration_s = j["duration_s"].get<double>();
    if (j.contains("drain")) c.drain = j["drain"].get<bool>();
    if (j.contains("fragmentation_interval_s"))
      c.fragmentation_interval_s = j["fragmentation_interval_s"].get<double>();
    if (j.contains("epoch_ms")) c.epoch_ms = j["epoch_ms"].get<Timestamp>();
    if (j.contains("users")) c.users = j["users"].get<int>();
    if (j.contains("projects")) c.projects = j["projects"].get<int>();
    if (j.contains("metrics")) {
      const auto& m = j["metrics"];
      if (m.contains("enabled")) c.metrics.enabled = m["enabled"].get<bool>();
      if (m.contains("names")) {
        c.metrics.metrics.clear();
        for (const auto& n : m["names"]) c.metrics.metrics.push_back(parse_metric(n.get<std::string>()));
      }
      if (m.contains("default_scenario"))
        c.metrics.default_scenario = parse_scenario(m["default_scenario"].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad simulator config: ") + e.what());
  }
  if (c.partitions.empty()) throw ValidationError("config needs at least one partition");
  if (!(c.scrape_interval_s > 0) || !(c.duration_s > 0) || !(c.fragmentation_interval_s > 0))
    throw ValidationError("intervals and duration must be positive");
  if (c.users < 1 || c.projects < 1) throw ValidationError("users and projects must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

// Nodes are numbered n1..nN across partitions in config order; GPUs are
// n<i>g0..n<i>g7.
inline ClusterTopology generate_topology(const SimConfig& config) {
  ClusterTopology t;
  int node_no = 1;
  for (const auto& p : config.partitions) {
    t.add_partition({p.partition_id, p.machine_type, p.allowed_max_gpus_per_workload});
    for (int i = 0; i < p.nodes; ++i, ++node_no) {
      Node n;
      n.node_id = "n" + std::to_string(node_no);
      n.partition_id = p.partition_id;
      for (int g = 0; g < kGpusPerNode; ++g) n.gpu_uids.push_back(n.node_id + "g" + std::to_string(g));
      t.add_node(std::move(n));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Scheduler
// ---------------------------------------------------------------------------

struct NodeState {
  std::string node_id;
  std::string partition_id;
  std::array<bool, kGpusPerNode> busy{};
  int free = kGpusPerNode;
};

struct QueuedWorkload {
  Workload workload;
  std::string partition_id;
  Timestamp duration_ms = 0;
  std::uint64_t seq = 0;
};

struct SchedulerState {
  Timestamp time = 0;
  std::vector<Partition> partitions;
  std::vector<NodeState> nodes;  // topology order
  std::vector<QueuedWorkload> queue;  // arrival order
  std::map<std::string, Workload> running;
  std::map<std::string, std::pair<double, std::size_t>> wait_sum_by_type;  // seconds, count of started
  std::uint64_t next_seq = 0;
};

inline SchedulerState initial_state(const ClusterTopology& topo) {
  SchedulerState s;
  s.partitions = topo.partitions();
  for (const auto& n : topo.nodes()) s.nodes.push_back({n.node_id, n.partition_id, {}, kGpusPerNode});
  return s;
}

enum class EventKind { kSubmit, kAllocate, kStart, kEnd, kSampleBatch };

inline std::string_view event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::kSubmit: return "submit";
    case EventKind::kAllocate: return "allocate";
    case EventKind::kStart: return "start";
    case EventKind::kEnd: return "end";
    case EventKind::kSampleBatch: return "sample-batch";
  }
  return "?";
}

struct SimEvent {
  Timestamp time = 0;
  EventKind kind = EventKind::kSubmit;
  Workload workload;                 // submit/allocate/start/end
  Timestamp duration_ms = 0;         // submit only
  std::vector<MetricSample> samples;  // sample-batch only
};

struct Rejection {
  std::string workload_id;
  std::string reason;
};

struct StepResult {
  std::vector<SimEvent> emitted;    // happen at the step's time
  std::vector<SimEvent> scheduled;  // future events (workload ends)
  std::vector<Rejection> rejected;
};

// Smallest partition of the right machine type whose size limit admits the
// request; multi-node requests must be whole nodes.
inline std::optional<std::string> select_partition(const SchedulerState& s, const ResourceType& r,
                                                   std::string* reason = nullptr) {
  if (r.gpu_count < 1) {
    if (reason) *reason = "gpu_count must be >= 1";
    return std::nullopt;
  }
  if (r.gpu_count > kGpusPerNode && r.gpu_count % kGpusPerNode != 0) {
    if (reason) *reason = "multi-node requests must be a multiple of 8 GPUs";
    return std::nullopt;
  }
  const Partition* best = nullptr;
  for (const auto& p : s.partitions) {
    if (p.machine_type != r.machine_type || p.allowed_max_gpus_per_workload < r.gpu_count) continue;
    int nodes = 0;
    for (const auto& n : s.nodes) nodes += n.partition_id == p.partition_id ? 1 : 0;
    if (nodes * kGpusPerNode < r.gpu_count) continue;
    if (!best || p.allowed_max_gpus_per_workload < best->allowed_max_gpus_per_workload) best = &p;
  }
  if (!best) {
    if (reason) *reason = "no partition admits " + r.key();
    return std::nullopt;
  }
  return best->partition_id;
}

// Node indices chosen for a request, or nullopt when it does not fit now.
inline std::optional<std::vector<std::size_t>> choose_nodes(const SchedulerState& s,
                                                            const std::string& partition_id, int gpu_count,
                                                            PlacementPolicy policy) {
  if (gpu_count >= kGpusPerNode) {
    const std::size_t needed = static_cast<std::size_t>(gpu_count / kGpusPerNode);
    std::vector<std::size_t> picked;
    for (std::size_t i = 0; i < s.nodes.size() && picked.size() < needed; ++i)
      if (s.nodes[i].partition_id == partition_id && s.nodes[i].free == kGpusPerNode) picked.push_back(i);
    if (picked.size() < needed) return std::nullopt;
    return picked;
  }
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    const auto& n = s.nodes[i];
    if (n.partition_id != partition_id || n.free < gpu_count) continue;
    if (!best) {
      best = i;
      continue;
    }
    const int bf = s.nodes[*best].free;
    if (policy == PlacementPolicy::kSpread ? n.free > bf : n.free < bf) best = i;
  }
  if (!best) return std::nullopt;
  return std::vector<std::size_t>{*best};
}

inline std::vector<std::size_t> queue_order(const SchedulerState& s, QueuePolicy policy) {
  std::vector<std::size_t> idx(s.queue.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& wa = s.queue[a];
    const auto& wb = s.queue[b];
    if (policy == QueuePolicy::kPrioritySize && wa.workload.priority_score != wb.workload.priority_score)
      return wa.workload.priority_score > wb.workload.priority_score;
    return std::tie(wa.workload.submit_time, wa.seq) < std::tie(wb.workload.submit_time, wb.seq);
  });
  return idx;
}

// Greedy pass over the queue in policy order: every workload whose full GPU
// set fits right now is allocated (gang semantics, no reservations).
inline void dispatch(SchedulerState& s, PlacementPolicy placement, QueuePolicy queue, StepResult& out) {
  std::vector<bool> placed(s.queue.size(), false);
  for (std::size_t qi : queue_order(s, queue)) {
    auto& q = s.queue[qi];
    auto nodes = choose_nodes(s, q.partition_id, q.workload.resource.gpu_count, placement);
    if (!nodes) continue;
    Workload w = q.workload;
    int remaining = w.resource.gpu_count;
    for (std::size_t ni : *nodes) {
      auto& n = s.nodes[ni];
      for (int g = 0; g < kGpusPerNode && remaining > 0; ++g) {
        if (n.busy[static_cast<std::size_t>(g)]) continue;
        n.busy[static_cast<std::size_t>(g)] = true;
        --n.free;
        --remaining;
        w.allocated_gpu_uids.push_back(n.node_id + "g" + std::to_string(g));
      }
    }
    w.master_gpu_uid = w.allocated_gpu_uids.front();
    w.state = WorkloadState::kRunning;
    w.start_time = s.time;
    auto& acc = s.wait_sum_by_type[w.resource.key()];
    acc.first += static_cast<double>(s.time - w.submit_time) / 1000.0;
    acc.second += 1;

    SimEvent alloc{s.time, EventKind::kAllocate, w, 0, {}};
    SimEvent start{s.time, EventKind::kStart, w, 0, {}};
    Workload ended = w;
    ended.state = WorkloadState::kFinished;
    ended.end_time = s.time + q.duration_ms;
    SimEvent end{*ended.end_time, EventKind::kEnd, ended, 0, {}};
    out.emitted.push_back(std::move(alloc));
    out.emitted.push_back(std::move(start));
    out.scheduled.push_back(std::move(end));
    s.running[w.workload_id] = std::move(w);
    placed[qi] = true;
  }
  std::vector<QueuedWorkload> rest;
  for (std::size_t i = 0; i < s.queue.size(); ++i)
    if (!placed[i]) rest.push_back(std::move(s.queue[i]));
  s.queue = std::move(rest);
}

// Applies one submit or end event in place and runs a dispatch pass.
inline StepResult apply_event(SchedulerState& s, const SimEvent& ev, PlacementPolicy placement,
                              QueuePolicy queue) {
  if (ev.time < s.time) throw ValidationError("event time precedes scheduler time");
  s.time = ev.time;
  StepResult out;
  switch (ev.kind) {
    case EventKind::kSubmit: {
      std::string reason;
      auto part = select_partition(s, ev.workload.resource, &reason);
      if (!part) {
        out.rejected.push_back({ev.workload.workload_id, reason});
        return out;
      }
      QueuedWorkload q{ev.workload, *part, ev.duration_ms, s.next_seq++};
      q.workload.state = WorkloadState::kWaiting;
      s.queue.push_back(std::move(q));
      break;
    }
    case EventKind::kEnd: {
      auto it = s.running.find(ev.workload.workload_id);
      if (it == s.running.end()) throw NotFoundError("workload not running: " + ev.workload.workload_id);
      for (const auto& g : it->second.allocated_gpu_uids) {
        const auto pos = g.rfind('g');
        const std::string node_id = g.substr(0, pos);
        const auto slot = static_cast<std::size_t>(std::stoi(g.substr(pos + 1)));
        for (auto& n : s.nodes)
          if (n.node_id == node_id) {
            n.busy[slot] = false;
            ++n.free;
          }
      }
      s.running.erase(it);
      break;
    }
    default:
      throw ValidationError("scheduler only consumes submit and end events");
  }
  dispatch(s, placement, queue, out);
  return out;
}

// Value-semantics form of apply_event.
inline std::pair<SchedulerState, StepResult> schedule_step(SchedulerState state, const SimEvent& ev,
                                                           PlacementPolicy placement, QueuePolicy queue) {
  auto result = apply_event(state, ev, placement, queue);
  return {std::move(state), std::move(result)};
}

struct FragmentationMetrics {
  Timestamp time = 0;
  int fully_free_nodes = 0;
  int max_allocatable_8gpu_jobs = 0;
  std::map<std::string, std::size_t> waiting_by_type;
  std::map<std::string, double> mean_wait_by_type;  // seconds, over started workloads
};

inline FragmentationMetrics fragmentation_metrics(const SchedulerState& s) {
  FragmentationMetrics m;
  m.time = s.time;
  for (const auto& n : s.nodes) {
    if (n.free != kGpusPerNode) continue;
    ++m.fully_free_nodes;
    for (const auto& p : s.partitions)
      if (p.partition_id == n.partition_id && p.allowed_max_gpus_per_workload >= kGpusPerNode)
        ++m.max_allocatable_8gpu_jobs;
  }
  for (const auto& q : s.queue) ++m.waiting_by_type[q.workload.resource.key()];
  for (const auto& [type, acc] : s.wait_sum_by_type)
    if (acc.second > 0) m.mean_wait_by_type[type] = acc.first / static_cast<double>(acc.second);
  return m;
}

inline nlohmann::ordered_json to_json(const FragmentationMetrics& m) {
  nlohmann::ordered_json j;
  j["time"] = m.time;
  j["fully_free_nodes"] = m.fully_free_nodes;
  j["max_allocatable_8gpu_jobs"] = m.max_allocatable_8gpu_jobs;
  j["waiting_by_type"] = m.waiting_by_type;
  j["mean_wait_by_type"] = m.mean_wait_by_type;
  return j;
}

// ---------------------------------------------------------------------------
// Metric synthesis
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::string_view workload_id, std::uint64_t lane) {
  return splitmix64(seed ^ splitmix64(fnv1a(workload_id) + lane));
}

// One GPU's values at one scrape.
struct GpuReading {
  double utilization = 0, power = 0, memory = 0, temperature = 0, nvlink_tx = 0, nvlink_rx = 0;

  double get(Metric m) const {
    switch (m) {
      case Metric::kUtilization: return utilization;
      case Metric::kMemoryUsed: return memory;
      case Metric::kPower: return power;
      case Metric::kTemperature: return temperature;
      case Metric::kNvlinkTx: return nvlink_tx;
      case Metric::kNvlinkRx: return nvlink_rx;
    }
    return 0;
  }
};

inline constexpr double kGpuMemoryMib = 81920.0;

// Per-workload generator: each GPU draws from its own seeded stream; the
// imbalance scenario also shares one workload-level stream for its
// synchronization gaps.
class MetricSynthesizer {
 public:
  MetricSynthesizer(const Workload& w, ScenarioKind scenario, std::uint64_t seed)
      : scenario_(scenario), tdp_(tdp_watts(w.resource.machine_type)), shared_(stream_seed(seed, w.workload_id, 0)) {
    std::string last_node;
    for (std::size_t i = 0; i < w.allocated_gpu_uids.size(); ++i) {
      const auto& g = w.allocated_gpu_uids[i];
      const std::string node = g.substr(0, g.rfind('g'));
      master_.push_back(node != last_node);  // first GPU on each node
      last_node = node;
      gpu_rng_.emplace_back(stream_seed(seed, w.workload_id, i + 1));
    }
  }

  bool is_master(std::size_t gpu) const { return master_[gpu]; }

  // Readings for every allocated GPU at the next scrape tick.
  std::vector<GpuReading> next() {
    const bool sync_gap = std::bernoulli_distribution(0.55)(shared_);
    std::vector<GpuReading> out;
    for (std::size_t i = 0; i < gpu_rng_.size(); ++i) out.push_back(draw(gpu_rng_[i], master_[i], sync_gap));
    return out;
  }

 private:
  GpuReading draw(std::mt19937_64& rng, bool master, bool sync_gap) const {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    GpuReading r;
    double util = 0, power_frac = 0;
    switch (scenario_) {
      case ScenarioKind::kHealthy: {
        const bool dip = unit(rng) < 0.04;  // brief validation phases
        util = dip ? 5.0 + 20.0 * unit(rng) : 85.0 + 5.0 * noise(rng);
        power_frac = 0.55 + 0.4 * std::clamp(util, 0.0, 100.0) / 100.0 + 0.02 * noise(rng);
        break;
      }
      case ScenarioKind::kStalled:
        util = 96.5 + 1.5 * noise(rng);
        power_frac = 0.30 + 0.20 * unit(rng);
        break;
      case ScenarioKind::kImbalance: {
        if (master) {
          util = 88.0 + 5.0 * noise(rng);
          power_frac = 0.55 + 0.4 * std::clamp(util, 0.0, 100.0) / 100.0 + 0.02 * noise(rng);
        } else {
          // Left-skewed busy phases on [20, 75] between zero-utilization gaps.
          std::gamma_distribution<double> ga(5.0, 1.0), gb(2.0, 1.0);
          const double x = ga(rng);
          const double y = gb(rng);
          util = sync_gap ? 0.0 : 20.0 + 55.0 * x / (x + y);
          power_frac = 0.20 + 0.45 * util / 100.0 + 0.01 * noise(rng);
        }
        break;
      }
      case ScenarioKind::kIdle:
        util = 0.8 * unit(rng);
        power_frac = 0.12 + 0.06 * unit(rng);
        break;
    }
    r.utilization = std::clamp(util, 0.0, 100.0);
    r.power = std::clamp(power_frac, 0.05, 1.0) * tdp_;
    r.memory = std::clamp(kGpuMemoryMib * (scenario_ == ScenarioKind::kIdle ? 0.02 : 0.7) + 500.0 * noise(rng),
                          0.0, kGpuMemoryMib);
    r.temperature = std::max(0.0, 35.0 + 40.0 * r.power / tdp_ + noise(rng));
    r.nvlink_tx = std::max(0.0, r.utilization * 120.0 + 50.0 * noise(rng));
    r.nvlink_rx = std::max(0.0, r.utilization * 118.0 + 50.0 * noise(rng));
    return r;
  }

  ScenarioKind scenario_;
  double tdp_;
  std::mt19937_64 shared_;
  std::vector<std::mt19937_64> gpu_rng_;
  std::vector<bool> master_;
};

// Sample batches at every scrape tick (multiples of the interval since the
// epoch) inside [from, to].
inline std::vector<SimEvent> synthesize_metrics(const Workload& w, ScenarioKind scenario, std::uint64_t seed,
                                                const std::vector<Metric>& metrics, Timestamp interval_ms,
                                                Timestamp epoch_ms, Timestamp from, Timestamp to) {
  if (w.state != WorkloadState::kRunning && w.state != WorkloadState::kFinished)
    throw ValidationError("metrics are only synthesized for started workloads");
  std::vector<SimEvent> out;
  MetricSynthesizer gen(w, scenario, seed);
  Timestamp first = epoch_ms + ((from - epoch_ms + interval_ms - 1) / interval_ms) * interval_ms;
  for (Timestamp t = first; t <= to; t += interval_ms) {
    const auto readings = gen.next();
    if (t <= 0) continue;
    SimEvent ev{t, EventKind::kSampleBatch, {}, 0, {}};
    for (std::size_t i = 0; i < readings.size(); ++i)
      for (Metric m : metrics) ev.samples.push_back({t, w.allocated_gpu_uids[i], m, readings[i].get(m)});
    out.push_back(std::move(ev));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct SimResult {
  SimConfig config;
  ClusterTopology topology;
  std::vector<SimEvent> events;  // submit/allocate/start/end in processing order
  std::vector<Rejection> rejected;
  std::vector<FragmentationMetrics> fragmentation;
  std::map<std::string, ScenarioKind> scenarios;  // workload -> scenario for metric synthesis
  SchedulerState final_state;
  Timestamp horizon_ms = 0;  // metrics are synthesized up to here
};

struct Arrival {
  Timestamp time;
  Workload workload;
  Timestamp duration_ms;
  std::optional<ScenarioKind> scenario;
};

// Arrivals depend only on the seed, so runs that differ only in policy see
// identical traces.
inline std::vector<Arrival> generate_arrivals(const SimConfig& c) {
  std::mt19937_64 rng(splitmix64(c.seed));
  std::vector<std::tuple<Timestamp, std::size_t, std::size_t, Arrival>> raw;
  const Timestamp horizon = static_cast<Timestamp>(c.duration_s * 1000.0);
  for (std::size_t ci = 0; ci < c.arrivals.size(); ++ci) {
    const auto& ac = c.arrivals[ci];
    if (ac.rate_per_hour <= 0) continue;
    std::exponential_distribution<double> gap(ac.rate_per_hour / 3600.0);
    std::lognormal_distribution<double> dur(std::log(ac.duration_median_s), ac.duration_sigma);
    std::uniform_int_distribution<int> user(1, c.users), project(1, c.projects);
    double t = 0;
    std::size_t k = 0;
    while (true) {
      t += gap(rng);
      const auto tm = static_cast<Timestamp>(t * 1000.0);
      if (tm >= horizon) break;
      Arrival a;
      a.time = tm;
      a.duration_ms = std::max<Timestamp>(1000, static_cast<Timestamp>(dur(rng) * 1000.0));
      char ubuf[16], pbuf[16];
      std::snprintf(ubuf, sizeof ubuf, "user%02d", user(rng));
      std::snprintf(pbuf, sizeof pbuf, "proj%02d", project(rng));
      a.workload.user = ubuf;
      a.workload.project = pbuf;
      a.workload.resource = {ac.machine_type, ac.gpu_count};
      raw.emplace_back(tm, ci, k++, std::move(a));
    }
  }
  std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a), std::get<2>(a)) <
           std::tie(std::get<0>(b), std::get<1>(b), std::get<2>(b));
  });
  std::vector<Arrival> out;
  std::size_t no = 1;
  for (auto& r : raw) {
    auto a = std::move(std::get<3>(r));
    char id[16];
    std::snprintf(id, sizeof id, "w%06zu", no++);
    a.workload.workload_id = id;
    out.push_back(std::move(a));
  }
  for (const auto& iw : c.injected) {
    Arrival a;
    a.time = static_cast<Timestamp>(iw.submit_s * 1000.0);
    a.duration_ms = static_cast<Timestamp>(iw.duration_s * 1000.0);
    a.workload.workload_id = iw.workload_id;
    a.workload.user = iw.user;
    a.workload.project = iw.project;
    a.workload.resource = {iw.machine_type, iw.gpu_count};
    a.scenario = iw.scenario;
    out.push_back(std::move(a));
  }
  std::stable_sort(out.begin(), out.end(), [](const Arrival& a, const Arrival& b) { return a.time < b.time; });
  return out;
}

inline SimResult simulate(const SimConfig& c) {
  SimResult res;
  res.config = c;
  res.topology = generate_topology(c);
  SchedulerState state = initial_state(res.topology);
  const Timestamp epoch = c.epoch_ms;
  const Timestamp horizon = epoch + static_cast<Timestamp>(c.duration_s * 1000.0);
  const Timestamp frag_step = static_cast<Timestamp>(c.fragmentation_interval_s * 1000.0);
  state.time = epoch;

  // (time, priority, seq): ends are processed before submits at equal times.
  using Key = std::tuple<Timestamp, int, std::uint64_t>;
  std::map<Key, SimEvent> pending;
  std::uint64_t seq = 0;
  for (auto& a : generate_arrivals(c)) {
    SimEvent ev{epoch + a.time, EventKind::kSubmit, std::move(a.workload), a.duration_ms, {}};
    ev.workload.submit_time = ev.time;
    ev.workload.priority_score =
        c.queue == QueuePolicy::kPrioritySize ? static_cast<double>(ev.workload.resource.gpu_count) : 0.0;
    if (a.scenario) res.scenarios[ev.workload.workload_id] = *a.scenario;
    else if (c.metrics.enabled) res.scenarios[ev.workload.workload_id] = c.metrics.default_scenario;
    pending.emplace(Key{ev.time, 1, seq++}, std::move(ev));
  }

  Timestamp next_frag = epoch;
  auto record_until = [&](Timestamp t) {
    while (next_frag <= t && next_frag <= horizon) {
      const Timestamp saved = state.time;
      state.time = next_frag;
      res.fragmentation.push_back(fragmentation_metrics(state));
      state.time = std::max(saved, next_frag);
      next_frag += frag_step;
    }
  };

  while (!pending.empty()) {
    auto node = pending.extract(pending.begin());
    SimEvent ev = std::move(node.mapped());
    if (ev.time > horizon && !c.drain) break;
    record_until(ev.time - 1);
    auto step = apply_event(state, ev, c.placement, c.queue);
    res.events.push_back(std::move(ev));
    for (auto& r : step.rejected) res.rejected.push_back(std::move(r));
    for (auto& e : step.emitted) res.events.push_back(std::move(e));
    for (auto& e : step.scheduled) pending.emplace(Key{e.time, 0, seq++}, std::move(e));
  }
  record_until(horizon);
  res.horizon_ms = c.drain ? std::max(horizon, state.time) : horizon;
  res.final_state = std::move(state);
  return res;
}

// ---------------------------------------------------------------------------
// Trace output
// ---------------------------------------------------------------------------

inline std::string registry_line(const SimEvent& ev) {
  switch (ev.kind) {
    case EventKind::kSubmit: return serialize_submit_event(ev.workload);
    case EventKind::kStart: return serialize_start_event(ev.workload);
    case EventKind::kEnd: return serialize_end_event(ev.workload);
    default: return {};
  }
}

// Replayable NDJSON trace: topology, then registry events merged with sample
// batches by time (registry first on ties).
inline void write_trace(const SimResult& r, std::ostream& out) {
  for (const auto& p : r.topology.partitions()) out << serialize_partition_event(p) << '\n';
  for (const auto& n : r.topology.nodes()) out << serialize_node_event(n) << '\n';

  std::vector<SimEvent> batches;
  const auto interval = static_cast<Timestamp>(r.config.scrape_interval_s * 1000.0);
  std::map<std::string, Timestamp> end_of;
  for (const auto& ev : r.events)
    if (ev.kind == EventKind::kEnd) end_of[ev.workload.workload_id] = ev.time;
  for (const auto& ev : r.events) {
    if (ev.kind != EventKind::kStart) continue;
    auto it = r.scenarios.find(ev.workload.workload_id);
    if (it == r.scenarios.end()) continue;
    auto end_it = end_of.find(ev.workload.workload_id);
    const Timestamp to = end_it == end_of.end() ? r.horizon_ms : end_it->second;
    auto b = synthesize_metrics(ev.workload, it->second, r.config.seed, r.config.metrics.metrics, interval,
                                r.config.epoch_ms, *ev.workload.start_time, std::min(to, r.horizon_ms));
    for (auto& x : b) batches.push_back(std::move(x));
  }
  std::stable_sort(batches.begin(), batches.end(), [](const auto& a, const auto& b) { return a.time < b.time; });

  std::size_t bi = 0;
  auto flush_until = [&](Timestamp t, bool inclusive) {
    while (bi < batches.size() && (inclusive ? batches[bi].time <= t : batches[bi].time < t)) {
      for (const auto& s : batches[bi].samples) out << serialize_sample(s) << '\n';
      ++bi;
    }
  };
  for (const auto& ev : r.events) {
    const auto line = registry_line(ev);
    if (line.empty()) continue;
    flush_until(ev.time, false);
    out << line << '\n';
  }
  flush_until(std::numeric_limits<Timestamp>::max(), true);
}

inline nlohmann::ordered_json summary_json(const SimResult& r) {
  nlohmann::ordered_json j;
  j["seed"] = r.config.seed;
  j["placement"] = placement_name(r.config.placement);
  j["queue"] = queue_name(r.config.queue);
  std::size_t submitted = 0, started = 0, finished = 0;
  for (const auto& e : r.events) {
    submitted += e.kind == EventKind::kSubmit ? 1 : 0;
    started += e.kind == EventKind::kStart ? 1 : 0;
    finished += e.kind == EventKind::kEnd ? 1 : 0;
  }
  j["totals"] = {{"submitted", submitted}, {"started", started}, {"finished", finished},
                 {"rejected", r.rejected.size()}};
  double mean_free = 0;
  for (const auto& f : r.fragmentation) mean_free += f.fully_free_nodes;
  if (!r.fragmentation.empty()) mean_free /= static_cast<double>(r.fragmentation.size());
  j["mean_fully_free_nodes"] = mean_free;
  j["final"] = to_json(fragmentation_metrics(r.final_state));
  auto series = nlohmann::ordered_json::array();
  for (const auto& f : r.fragmentation) series.push_back(to_json(f));
  j["fragmentation"] = std::move(series);
  auto rej = nlohmann::ordered_json::array();
  for (const auto& x : r.rejected) rej.push_back({{"workload_id", x.workload_id}, {"reason", x.reason}});
  j["rejected"] = std::move(rej);
  return j;
}

}  // namespace clusterscape::sim
