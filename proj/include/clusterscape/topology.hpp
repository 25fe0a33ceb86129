#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "clusterscape/error.hpp"
#include "clusterscape/metrics.hpp"

namespace clusterscape {

inline constexpr int kGpusPerNode = 8;
inline constexpr int kUnboundedGpus = std::numeric_limits<int>::max();

// Board power limit per machine type, used to turn "fraction of TDP"
// thresholds into absolute watts.
inline double tdp_watts(const std::string& machine_type) {
  if (machine_type == "A100") return 400.0;
  if (machine_type == "V100") return 300.0;
  if (machine_type == "H100") return 700.0;
  throw ValidationError("unknown machine type: " + machine_type);
}

struct Partition {
  std::string partition_id;
  std::string machine_type;
  int allowed_max_gpus_per_workload = kUnboundedGpus;
  friend bool operator==(const Partition&, const Partition&) = default;
};

struct Node {
  std::string node_id;
  std::string partition_id;
  std::vector<std::string> gpu_uids;
  friend bool operator==(const Node&, const Node&) = default;
};

struct GpuLocation {
  std::size_t node_index = 0;
  int gpu_index = 0;
};

class ClusterTopology {
 public:
  void add_partition(Partition p) {
    if (find_partition(p.partition_id))
      throw ValidationError("duplicate partition: " + p.partition_id);
    partitions_.push_back(std::move(p));
  }

  void add_node(Node n) {
    if (!find_partition(n.partition_id))
      throw ValidationError("node " + n.node_id + " references unknown partition");
    if (node_index_.count(n.node_id)) throw ValidationError("duplicate node: " + n.node_id);
    for (const auto& g : n.gpu_uids)
      if (gpu_index_.count(g)) throw ValidationError("gpu in two nodes: " + g);
    const std::size_t idx = nodes_.size();
    node_index_[n.node_id] = idx;
    for (std::size_t i = 0; i < n.gpu_uids.size(); ++i)
      gpu_index_[n.gpu_uids[i]] = GpuLocation{idx, static_cast<int>(i)};
    nodes_.push_back(std::move(n));
  }

  const std::vector<Partition>& partitions() const { return partitions_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  const Partition* find_partition(const std::string& id) const {
    for (const auto& p : partitions_)
      if (p.partition_id == id) return &p;
    return nullptr;
  }
  std::optional<GpuLocation> locate(const std::string& gpu_uid) const {
    auto it = gpu_index_.find(gpu_uid);
    if (it == gpu_index_.end()) return std::nullopt;
    return it->second;
  }
  const Node& node_of(const std::string& gpu_uid) const {
    auto loc = locate(gpu_uid);
    if (!loc) throw NotFoundError("unknown gpu: " + gpu_uid);
    return nodes_[loc->node_index];
  }
  bool has_gpu(const std::string& gpu_uid) const { return gpu_index_.count(gpu_uid) != 0; }
  std::size_t gpu_count() const { return gpu_index_.size(); }

  // Physical order: node order, then GPU slot.
  std::vector<std::string> all_gpus() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_) out.insert(out.end(), n.gpu_uids.begin(), n.gpu_uids.end());
    return out;
  }

  friend bool operator==(const ClusterTopology& a, const ClusterTopology& b) {
    return a.partitions_ == b.partitions_ && a.nodes_ == b.nodes_;
  }

 private:
  std::vector<Partition> partitions_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> node_index_;
  std::unordered_map<std::string, GpuLocation> gpu_index_;
};

enum class WorkloadState { kWaiting, kRunning, kFinished, kFailed };

inline std::string_view state_name(WorkloadState s) {
  switch (s) {
    case WorkloadState::kWaiting: return "waiting";
    case WorkloadState::kRunning: return "running";
    case WorkloadState::kFinished: return "finished";
    case WorkloadState::kFailed: return "failed";
  }
  return "?";
}

inline WorkloadState parse_state(std::string_view s) {
  if (s == "waiting") return WorkloadState::kWaiting;
  if (s == "running") return WorkloadState::kRunning;
  if (s == "finished") return WorkloadState::kFinished;
  if (s == "failed") return WorkloadState::kFailed;
  throw ValidationError("unknown workload state: " + std::string(s));
}

struct ResourceType {
  std::string machine_type;
  int gpu_count = 1;

  std::string key() const { return machine_type + "-" + std::to_string(gpu_count); }
  friend bool operator==(const ResourceType&, const ResourceType&) = default;
};

struct Workload {
  std::string workload_id;
  std::string user;
  std::string project;
  ResourceType resource;
  WorkloadState state = WorkloadState::kWaiting;
  Timestamp submit_time = 0;
  std::optional<Timestamp> start_time;
  std::optional<Timestamp> end_time;
  double priority_score = 0.0;
  std::vector<std::string> allocated_gpu_uids;
  std::optional<std::string> master_gpu_uid;

  friend bool operator==(const Workload&, const Workload&) = default;
};

inline nlohmann::ordered_json to_json(const Workload& w) {
  nlohmann::ordered_json j;
  j["workload_id"] = w.workload_id;
  j["user"] = w.user;
  j["project"] = w.project;
  j["machine_type"] = w.resource.machine_type;
  j["gpu_count"] = w.resource.gpu_count;
  j["state"] = state_name(w.state);
  j["submit_time"] = w.submit_time;
  j["start_time"] = w.start_time ? nlohmann::ordered_json(*w.start_time) : nullptr;
  j["end_time"] = w.end_time ? nlohmann::ordered_json(*w.end_time) : nullptr;
  j["priority_score"] = w.priority_score;
  j["allocated_gpu_uids"] = w.allocated_gpu_uids;
  j["master_gpu_uid"] = w.master_gpu_uid ? nlohmann::ordered_json(*w.master_gpu_uid) : nullptr;
  return j;
}

inline nlohmann::ordered_json to_json(const ClusterTopology& t) {
  nlohmann::ordered_json j;
  auto parts = nlohmann::ordered_json::array();
  for (const auto& p : t.partitions()) {
    nlohmann::ordered_json pj;
    pj["partition_id"] = p.partition_id;
    pj["machine_type"] = p.machine_type;
    pj["allowed_max_gpus_per_workload"] =
        p.allowed_max_gpus_per_workload == kUnboundedGpus
            ? nlohmann::ordered_json(nullptr)
            : nlohmann::ordered_json(p.allowed_max_gpus_per_workload);
    parts.push_back(std::move(pj));
  }
  auto nodes = nlohmann::ordered_json::array();
  for (const auto& n : t.nodes()) {
    nlohmann::ordered_json nj;
    nj["node_id"] = n.node_id;
    nj["partition_id"] = n.partition_id;
    nj["gpu_uids"] = n.gpu_uids;
    nodes.push_back(std::move(nj));
  }
  j["partitions"] = std::move(parts);
  j["nodes"] = std::move(nodes);
  return j;
}

}  // namespace clusterscape
