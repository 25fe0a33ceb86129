#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clusterscape/error.hpp"
#include "clusterscape/metrics.hpp"
#include "clusterscape/store.hpp"
#include "clusterscape/topology.hpp"

namespace clusterscape {

// Ceiling on simultaneously enabled rules; the overview only has room for
// five indicator slots per group.
inline constexpr int kMaxEnabledRules = 5;

enum class CompareOp { kLess, kLessEqual, kGreater, kGreaterEqual };

inline std::string_view op_symbol(CompareOp op) {
  switch (op) {
    case CompareOp::kLess: return "<";
    case CompareOp::kLessEqual: return "<=";
    case CompareOp::kGreater: return ">";
    case CompareOp::kGreaterEqual: return ">=";
  }
  return "?";
}

inline CompareOp parse_op(std::string_view s) {
  if (s == "<") return CompareOp::kLess;
  if (s == "<=") return CompareOp::kLessEqual;
  if (s == ">") return CompareOp::kGreater;
  if (s == ">=") return CompareOp::kGreaterEqual;
  throw ValidationError("unsupported operator: " + std::string(s));
}

inline bool compare(double value, CompareOp op, double threshold) {
  switch (op) {
    case CompareOp::kLess: return value < threshold;
    case CompareOp::kLessEqual: return value <= threshold;
    case CompareOp::kGreater: return value > threshold;
    case CompareOp::kGreaterEqual: return value >= threshold;
  }
  return false;
}

struct Condition {
  Metric metric = Metric::kUtilization;
  StatisticType stat;
  CompareOp op = CompareOp::kLess;
  double threshold = 0.0;
  friend bool operator==(const Condition&, const Condition&) = default;
};

struct ViolationRule {
  std::string rule_id;
  std::string display_name;
  std::vector<Condition> conditions;
  bool enabled = true;
  int ordinal = 0;  // 1..5, 0 = assign on insertion
  friend bool operator==(const ViolationRule&, const ViolationRule&) = default;
};

// Power threshold expressed as a fraction of the machine type's TDP.
inline double power_threshold(const std::string& machine_type, double fraction_of_tdp) {
  return fraction_of_tdp * tdp_watts(machine_type);
}

inline nlohmann::ordered_json to_json(const Condition& c) {
  nlohmann::ordered_json j;
  j["metric"] = metric_name(c.metric);
  j["stat"] = to_json(c.stat);
  j["op"] = op_symbol(c.op);
  j["threshold"] = c.threshold;
  return j;
}

inline nlohmann::ordered_json to_json(const ViolationRule& r) {
  nlohmann::ordered_json j;
  j["rule_id"] = r.rule_id;
  j["display_name"] = r.display_name;
  auto conds = nlohmann::ordered_json::array();
  for (const auto& c : r.conditions) conds.push_back(to_json(c));
  j["conditions"] = std::move(conds);
  j["enabled"] = r.enabled;
  j["ordinal"] = r.ordinal;
  return j;
}

template <class Json>
Condition condition_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("condition must be an object");
  for (const char* key : {"metric", "stat", "op", "threshold"})
    if (!j.contains(key)) throw ValidationError(std::string("condition missing '") + key + "'");
  if (!j["metric"].is_string() || !j["op"].is_string() || !j["threshold"].is_number())
    throw ValidationError("condition has fields of the wrong type");
  Condition c;
  c.metric = parse_metric(j["metric"].template get<std::string>());
  c.stat = statistic_from_json(j["stat"]);
  c.op = parse_op(j["op"].template get<std::string>());
  c.threshold = j["threshold"].template get<double>();
  if (!std::isfinite(c.threshold)) throw ValidationError("threshold must be finite");
  return c;
}

template <class Json>
ViolationRule rule_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("rule must be an object");
  if (!j.contains("rule_id") || !j["rule_id"].is_string() ||
      j["rule_id"].template get<std::string>().empty())
    throw ValidationError("rule needs a non-empty 'rule_id'");
  ViolationRule r;
  r.rule_id = j["rule_id"].template get<std::string>();
  r.display_name = j.contains("display_name") && j["display_name"].is_string()
                       ? j["display_name"].template get<std::string>()
                       : r.rule_id;
  if (!j.contains("conditions") || !j["conditions"].is_array() || j["conditions"].empty())
    throw ValidationError("rule needs at least one condition");
  for (const auto& c : j["conditions"]) r.conditions.push_back(condition_from_json(c));
  if (j.contains("enabled")) {
    if (!j["enabled"].is_boolean()) throw ValidationError("'enabled' must be boolean");
    r.enabled = j["enabled"].template get<bool>();
  }
  if (j.contains("ordinal") && !j["ordinal"].is_null()) {
    if (!j["ordinal"].is_number_integer()) throw ValidationError("'ordinal' must be an integer");
    r.ordinal = j["ordinal"].template get<int>();
    if (r.ordinal < 0 || r.ordinal > kMaxEnabledRules)
      throw ValidationError("ordinal must be in 1..5");
  }
  return r;
}

// Ordered rule list with the enabled-rule ceiling enforced at mutation time.
class RuleSet {
 public:
  const std::vector<ViolationRule>& rules() const { return rules_; }

  std::vector<ViolationRule> enabled_rules() const {
    std::vector<ViolationRule> out;
    for (const auto& r : rules_)
      if (r.enabled) out.push_back(r);
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.ordinal < b.ordinal; });
    return out;
  }

  const ViolationRule* find(const std::string& id) const {
    for (const auto& r : rules_)
      if (r.rule_id == id) return &r;
    return nullptr;
  }

  // Inserts or replaces by rule_id. Assigns the lowest free ordinal when the
  // rule has none.
  const ViolationRule& upsert(ViolationRule rule) {
    if (rule.conditions.empty()) throw ValidationError("rule needs at least one condition");
    std::vector<ViolationRule> next;
    for (const auto& r : rules_)
      if (r.rule_id != rule.rule_id) next.push_back(r);
    if (rule.enabled) {
      std::set<int> used;
      for (const auto& r : next)
        if (r.enabled) used.insert(r.ordinal);
      if (static_cast<int>(used.size()) >= kMaxEnabledRules)
        throw RuleLimitError("rule limit: at most 5 enabled rules");
      if (rule.ordinal == 0) {
        for (int o = 1; o <= kMaxEnabledRules; ++o)
          if (!used.count(o)) {
            rule.ordinal = o;
            break;
          }
      } else if (used.count(rule.ordinal)) {
        throw ValidationError("ordinal " + std::to_string(rule.ordinal) + " already in use");
      }
    }
    const std::string id = rule.rule_id;
    auto pos = std::find_if(rules_.begin(), rules_.end(),
                            [&](const auto& r) { return r.rule_id == id; });
    if (pos != rules_.end()) {
      *pos = std::move(rule);
      return *pos;
    }
    rules_.push_back(std::move(rule));
    return rules_.back();
  }

  bool remove(const std::string& id) {
    auto it = std::remove_if(rules_.begin(), rules_.end(),
                             [&](const auto& r) { return r.rule_id == id; });
    const bool found = it != rules_.end();
    rules_.erase(it, rules_.end());
    return found;
  }

  nlohmann::ordered_json to_json() const {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : rules_) arr.push_back(clusterscape::to_json(r));
    return arr;
  }

  static RuleSet from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw ValidationError("rules document must be an array");
    RuleSet set;
    for (const auto& r : j) set.upsert(rule_from_json(r));
    return set;
  }

  static RuleSet load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read rules file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("malformed rules file", e.byte);
    }
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write rules file: " + path);
    out << to_json().dump(2) << '\n';
  }

 private:
  std::vector<ViolationRule> rules_;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ConditionResult {
  double value = 0.0;
  bool satisfied = false;
};

// nullopt when the series is empty: such a condition is never counted as fired.
inline std::optional<ConditionResult> evaluate_condition(const Condition& cond,
                                                         const MetricSeries& series) {
  if (series.empty()) return std::nullopt;
  const double v = compute_statistic(series, cond.stat);
  return ConditionResult{v, compare(v, cond.op, cond.threshold)};
}

struct RuleHit {
  std::string rule_id;
  std::string gpu_uid;
  std::string workload_id;
  Timestamp window_start = 0;
  Timestamp window_end = 0;
  std::vector<std::optional<double>> condition_values;
  bool evaluable = true;
  bool fired = false;
};

inline nlohmann::ordered_json to_json(const RuleHit& h) {
  nlohmann::ordered_json j;
  j["rule_id"] = h.rule_id;
  j["gpu"] = h.gpu_uid;
  j["workload_id"] = h.workload_id;
  j["window"] = {h.window_start, h.window_end};
  auto vals = nlohmann::ordered_json::array();
  for (const auto& v : h.condition_values)
    vals.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr));
  j["condition_values"] = std::move(vals);
  j["evaluable"] = h.evaluable;
  j["fired"] = h.fired;
  return j;
}

// One hit per allocated GPU over [start, min(now, end)].
inline std::vector<RuleHit> evaluate_rule(const ViolationRule& rule, const Workload& w,
                                          const MetricsStore& store, Timestamp now) {
  std::vector<RuleHit> hits;
  if (!rule.enabled) return hits;
  if (w.state == WorkloadState::kWaiting || !w.start_time) return hits;
  const Timestamp start = *w.start_time;
  const Timestamp end = w.end_time ? std::min(now, *w.end_time) : now;
  for (const auto& gpu : w.allocated_gpu_uids) {
    RuleHit hit;
    hit.rule_id = rule.rule_id;
    hit.gpu_uid = gpu;
    hit.workload_id = w.workload_id;
    hit.window_start = start;
    hit.window_end = end;
    bool all = true;
    for (const auto& cond : rule.conditions) {
      std::optional<ConditionResult> r;
      if (end >= start && store.knows_gpu(gpu))
        r = evaluate_condition(cond, store.query_series(gpu, cond.metric, start, end));
      if (!r) {
        hit.evaluable = false;
        hit.condition_values.push_back(std::nullopt);
        all = false;
      } else {
        hit.condition_values.push_back(r->value);
        all = all && r->satisfied;
      }
    }
    hit.fired = hit.evaluable && all;
    hits.push_back(std::move(hit));
  }
  return hits;
}

// GPU x rule matrix. Rows are every allocated GPU of every running workload
// (workload order, then allocation order); columns are enabled rules by ordinal.
struct RuleHitMatrix {
  struct Row {
    std::string gpu_uid;
    std::string workload_id;
    std::vector<bool> fired;
    std::vector<bool> evaluable;
  };
  std::vector<std::string> rule_ids;
  std::vector<int> ordinals;
  std::vector<Row> rows;

  std::set<std::string> fired_gpus(std::size_t rule_col) const {
    std::set<std::string> out;
    for (const auto& r : rows)
      if (r.fired[rule_col]) out.insert(r.gpu_uid);
    return out;
  }
};

inline RuleHitMatrix evaluate_ruleset(const std::vector<ViolationRule>& rules,
                                      const std::vector<Workload>& workloads,
                                      const MetricsStore& store, Timestamp now) {
  std::vector<const ViolationRule*> enabled;
  for (const auto& r : rules)
    if (r.enabled) enabled.push_back(&r);
  if (static_cast<int>(enabled.size()) > kMaxEnabledRules)
    throw RuleLimitError("rule limit: at most 5 enabled rules");
  std::stable_sort(enabled.begin(), enabled.end(),
                   [](auto* a, auto* b) { return a->ordinal < b->ordinal; });

  RuleHitMatrix m;
  if (enabled.empty()) return m;
  for (auto* r : enabled) {
    m.rule_ids.push_back(r->rule_id);
    m.ordinals.push_back(r->ordinal);
  }
  for (const auto& w : workloads) {
    if (w.state != WorkloadState::kRunning) continue;
    const std::size_t first = m.rows.size();
    for (const auto& g : w.allocated_gpu_uids)
      m.rows.push_back({g, w.workload_id, std::vector<bool>(enabled.size(), false),
                        std::vector<bool>(enabled.size(), true)});
    for (std::size_t c = 0; c < enabled.size(); ++c) {
      const auto hits = evaluate_rule(*enabled[c], w, store, now);
      for (std::size_t i = 0; i < hits.size(); ++i) {
        m.rows[first + i].fired[c] = hits[i].fired;
        m.rows[first + i].evaluable[c] = hits[i].evaluable;
      }
    }
  }
  return m;
}

inline nlohmann::ordered_json to_json(const RuleHitMatrix& m) {
  nlohmann::ordered_json j;
  j["rules"] = m.rule_ids;
  j["ordinals"] = m.ordinals;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : m.rows) {
    nlohmann::ordered_json rj;
    rj["gpu"] = r.gpu_uid;
    rj["workload_id"] = r.workload_id;
    rj["fired"] = r.fired;
    rj["evaluable"] = r.evaluable;
    rows.push_back(std::move(rj));
  }
  j["rows"] = std::move(rows);
  return j;
}

struct GroupViolationSummary {
  struct PerRule {
    std::string rule_id;
    std::size_t matching_unit_count = 0;
    std::size_t total_unit_count = 0;
    double proportion = 0.0;
  };
  std::string group_id;
  std::vector<PerRule> per_rule;
  bool any_hit = false;
};

// `membership` maps gpu -> group; GPUs absent from the matrix count as not
// fired. Groups come out in ascending group_id order.
inline std::vector<GroupViolationSummary> summarize_group(
    const RuleHitMatrix& m, const std::map<std::string, std::string>& membership) {
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < m.rows.size(); ++i) row_of[m.rows[i].gpu_uid] = i;

  std::map<std::string, GroupViolationSummary> groups;
  for (const auto& [gpu, group] : membership) {
    auto& g = groups[group];
    if (g.per_rule.empty()) {
      g.group_id = group;
      for (const auto& id : m.rule_ids) g.per_rule.push_back({id, 0, 0, 0.0});
    }
    auto it = row_of.find(gpu);
    for (std::size_t c = 0; c < m.rule_ids.size(); ++c) {
      ++g.per_rule[c].total_unit_count;
      if (it != row_of.end() && m.rows[it->second].fired[c]) ++g.per_rule[c].matching_unit_count;
    }
  }
  std::vector<GroupViolationSummary> out;
  for (auto& [id, g] : groups) {
    for (auto& pr : g.per_rule) {
      pr.proportion = pr.total_unit_count == 0
                          ? 0.0
                          : static_cast<double>(pr.matching_unit_count) /
                                static_cast<double>(pr.total_unit_count);
      g.any_hit = g.any_hit || pr.matching_unit_count > 0;
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline nlohmann::ordered_json to_json(const GroupViolationSummary& g) {
  nlohmann::ordered_json j;
  j["group_id"] = g.group_id;
  auto rules = nlohmann::ordered_json::array();
  for (const auto& pr : g.per_rule) {
    nlohmann::ordered_json rj;
    rj["rule_id"] = pr.rule_id;
    rj["matching_unit_count"] = pr.matching_unit_count;
    rj["total_unit_count"] = pr.total_unit_count;
    rj["proportion"] = pr.proportion;
    rules.push_back(std::move(rj));
  }
  j["per_rule"] = std::move(rules);
  j["any_hit"] = g.any_hit;
  return j;
}

}  // namespace clusterscape
