#pragma once

// Reference implementations and fixtures shared by the unit tests and the
// acceptance runner. Oracles are written from the definitions, not from the
// library code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "clusterscape/diagnostics.hpp"
#include "clusterscape/layout.hpp"
#include "clusterscape/metrics.hpp"
#include "clusterscape/rules.hpp"
#include "clusterscape/service.hpp"
#include "clusterscape/sim.hpp"

namespace testing_support {

using namespace clusterscape;

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

// Hyndman-Fan type 7 with 1-based ranks: h = (n-1)p + 1.
inline double oracle_quantile(std::vector<double> v, double p_fraction) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p_fraction + 1.0;
  const double fl = std::floor(h);
  const auto k = static_cast<std::size_t>(fl);  // 1-based
  if (k >= v.size()) return v.back();
  return v[k - 1] + (h - fl) * (v[k] - v[k - 1]);
}

inline double oracle_statistic(const std::vector<double>& v, const StatisticType& s) {
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  switch (s.kind) {
    case StatisticType::Kind::kMin: return sorted.front();
    case StatisticType::Kind::kMax: return sorted.back();
    case StatisticType::Kind::kMean: {
      long double acc = 0;
      for (double x : sorted) acc += x;
      return static_cast<double>(acc / static_cast<long double>(sorted.size()));
    }
    case StatisticType::Kind::kMedian: return oracle_quantile(v, 0.5);
    case StatisticType::Kind::kPercentile: return oracle_quantile(v, s.p / 100.0);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Histograms and JSD
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> oracle_counts(const std::vector<double>& values, const std::vector<double>& edges) {
  std::vector<std::size_t> c(edges.size() - 1, 0);
  for (double v : values) {
    std::size_t idx = 0;
    if (v >= edges.back()) {
      idx = c.size() - 1;
    } else {
      for (std::size_t i = 0; i + 1 < edges.size(); ++i)
        if (v >= edges[i]) idx = i;
    }
    ++c[idx];
  }
  return c;
}

inline double oracle_jsd_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  auto kl = [](const std::vector<double>& a, const std::vector<double>& m) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] > 0) s += a[i] * std::log2(a[i] / m[i]);
    return s;
  };
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl(p, m) + 0.5 * kl(q, m);
}

inline double oracle_jsd_distance(const Histogram& a, const Histogram& b) {
  return std::sqrt(std::clamp(oracle_jsd_divergence(a.mass, b.mass), 0.0, 1.0));
}

inline Histogram random_histogram(std::mt19937_64& rng, std::size_t bins, double zero_prob = 0.3) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Histogram h;
  h.bin_edges = equal_width_edges({0.0, 100.0}, bins);
  h.mass.assign(bins, 0.0);
  double sum = 0;
  for (auto& m : h.mass) {
    m = u(rng) < zero_prob ? 0.0 : u(rng);
    sum += m;
  }
  if (sum == 0) {
    h.mass[0] = 1.0;
    sum = 1.0;
  }
  for (auto& m : h.mass) m /= sum;
  h.empty = false;
  return h;
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

// Recomputes every average linkage from the original matrix at each step
// (no update formula). Ties go to the pair whose smallest members are
// lexicographically smallest.
inline std::vector<int> oracle_average_linkage(const std::vector<std::vector<double>>& d,
                                               std::optional<std::size_t> k, std::optional<double> threshold) {
  const std::size_t n = d.size();
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < n; ++i) clusters.push_back({i});
  while (clusters.size() > 1) {
    if (k && clusters.size() <= *k) break;
    double best = INFINITY;
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < clusters.size(); ++a)
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double s = 0;
        for (auto x : clusters[a])
          for (auto y : clusters[b]) s += d[x][y];
        const double link = s / static_cast<double>(clusters[a].size() * clusters[b].size());
        const auto key = std::make_pair(std::min(clusters[a].front(), clusters[b].front()),
                                        std::max(clusters[a].front(), clusters[b].front()));
        const auto best_key = std::make_pair(std::min(clusters[ba].front(), clusters[bb].front()),
                                             std::max(clusters[ba].front(), clusters[bb].front()));
        if (link < best || (link == best && key < best_key)) {
          best = link;
          ba = a;
          bb = b;
        }
      }
    if (!k && threshold && best > *threshold) break;
    auto merged = clusters[ba];
    merged.insert(merged.end(), clusters[bb].begin(), clusters[bb].end());
    std::sort(merged.begin(), merged.end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
    clusters[ba] = merged;
    std::sort(clusters.begin(), clusters.end());
  }
  std::sort(clusters.begin(), clusters.end());  // by first member
  std::vector<int> out(n, -1);
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (auto m : clusters[c]) out[m] = static_cast<int>(c);
  return out;
}

inline DistanceMatrix random_matrix(std::mt19937_64& rng, std::size_t n, bool integer_valued) {
  DistanceMatrix m;
  m.method = DistanceMethod::kJsd;
  m.d.assign(n, std::vector<double>(n, 0.0));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> ui(1, 6);
  for (std::size_t i = 0; i < n; ++i) {
    m.labels.push_back("g" + std::to_string(i));
    for (std::size_t j = i + 1; j < n; ++j) m.d[i][j] = m.d[j][i] = integer_valued ? ui(rng) : u(rng);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Rules
// ---------------------------------------------------------------------------

inline ViolationRule make_rule(std::string id, std::vector<Condition> conds, int ordinal = 0) {
  ViolationRule r;
  r.rule_id = id;
  r.display_name = id;
  r.conditions = std::move(conds);
  r.ordinal = ordinal;
  return r;
}

inline ViolationRule stall_rule(const std::string& machine_type = "A100") {
  return make_rule("stall", {{Metric::kUtilization, StatisticType::percentile(95), CompareOp::kGreater, 90.0},
                             {Metric::kPower, StatisticType::median(), CompareOp::kLess,
                              power_threshold(machine_type, 0.7)}});
}

inline ViolationRule imbalance_r1() {
  return make_rule("R1", {{Metric::kUtilization, StatisticType::percentile(95), CompareOp::kLess, 80.0}});
}
inline ViolationRule imbalance_r2() {
  return make_rule("R2", {{Metric::kUtilization, StatisticType::median(), CompareOp::kLess, 50.0}});
}

// ---------------------------------------------------------------------------
// Simulator scenarios
// ---------------------------------------------------------------------------

// Two 16-GPU jobs on four nodes: one stalled, one healthy control. The run
// stops while both are still running.
inline sim::SimConfig stall_config(std::uint64_t seed) {
  sim::SimConfig c;
  c.seed = seed;
  c.partitions = {{"train", "A100", 4, kUnboundedGpus}};
  sim::InjectedWorkload stalled;
  stalled.workload_id = "stalled";
  stalled.gpu_count = 16;
  stalled.submit_s = 60;
  stalled.duration_s = 6 * 3600;
  stalled.scenario = sim::ScenarioKind::kStalled;
  sim::InjectedWorkload healthy = stalled;
  healthy.workload_id = "healthy";
  healthy.scenario = sim::ScenarioKind::kHealthy;
  c.injected = {stalled, healthy};
  c.duration_s = 2 * 3600;
  c.metrics.metrics = {Metric::kUtilization, Metric::kPower};
  return c;
}

// One 64-GPU distributed job over eight nodes with a rank-0 bottleneck.
inline sim::SimConfig imbalance_config(std::uint64_t seed) {
  sim::SimConfig c;
  c.seed = seed;
  c.partitions = {{"train", "A100", 8, kUnboundedGpus}};
  sim::InjectedWorkload w;
  w.workload_id = "w1";
  w.gpu_count = 64;
  w.submit_s = 30;
  w.duration_s = 8 * 3600;
  w.scenario = sim::ScenarioKind::kImbalance;
  c.injected = {w};
  c.duration_s = 2 * 3600;
  c.metrics.metrics = {Metric::kUtilization, Metric::kPower};
  return c;
}

// 50 nodes, mixed 1/2/4/8-GPU arrivals for a week, drained at the end.
inline sim::SimConfig fragmentation_config(std::uint64_t seed, sim::PlacementPolicy policy) {
  sim::SimConfig c;
  c.seed = seed;
  c.partitions = {{"shared", "A100", 50, kUnboundedGpus}};
  c.arrivals = {
      {"A100", 1, 16.0, 4 * 3600.0, 1.0},
      {"A100", 2, 8.0, 4 * 3600.0, 1.0},
      {"A100", 4, 4.0, 4 * 3600.0, 1.0},
      {"A100", 8, 0.6, 4 * 3600.0, 1.0},
  };
  c.placement = policy;
  c.queue = sim::QueuePolicy::kFcfs;
  c.duration_s = 7 * 24 * 3600.0;
  c.drain = true;
  c.fragmentation_interval_s = 3600;
  return c;
}

inline std::string trace_of(const sim::SimResult& r) {
  std::ostringstream os;
  sim::write_trace(r, os);
  return os.str();
}

// ---------------------------------------------------------------------------
// Layout geometry checks
// ---------------------------------------------------------------------------

inline bool contains(const Rect& outer, const Rect& inner, double eps = 1e-6) {
  return inner.x >= outer.x - eps && inner.y >= outer.y - eps && inner.right() <= outer.right() + eps &&
         inner.bottom() <= outer.bottom() + eps;
}

inline double overlap_area(const Rect& a, const Rect& b) {
  const double w = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double h = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  return w > 0 && h > 0 ? w * h : 0.0;
}

struct GeometryAudit {
  std::size_t sibling_overlaps = 0;
  std::size_t containment_failures = 0;
  std::size_t proportionality_failures = 0;
  std::size_t unit_count = 0;
  std::vector<std::string> notes;
};

// Checks every group and unit rectangle against its parent's padded content
// box, pairwise sibling overlap, and Count-sized proportionality for Fill and
// Pack layers.
inline GeometryAudit audit_geometry(const LayoutGeometry& g, const std::vector<UnitRecord>& units,
                                    const LayoutSpec& spec) {
  GeometryAudit a;
  a.unit_count = g.unit_rects.size();
  std::map<std::vector<std::string>, const GroupRect*> by_path;
  for (const auto& gr : g.group_rects) by_path[gr.path] = &gr;
  std::map<std::vector<std::string>, std::vector<const GroupRect*>> children;
  for (const auto& gr : g.group_rects) {
    if (gr.path.empty()) continue;
    auto parent = gr.path;
    parent.pop_back();
    children[parent].push_back(&gr);
  }
  const double tol = 1e-6;
  for (const auto& [ppath, kids] : children) {
    const GroupRect* parent = by_path.at(ppath);
    const Rect content = shrink(parent->rect, spec.padding_at(parent->depth));
    for (std::size_t i = 0; i < kids.size(); ++i) {
      if (!contains(content, kids[i]->rect, tol)) ++a.containment_failures;
      for (std::size_t j = i + 1; j < kids.size(); ++j)
        if (overlap_area(kids[i]->rect, kids[j]->rect) > tol) ++a.sibling_overlaps;
    }
  }

  // Count proportionality: each child's share of the parent content area
  // matches its unit share; the allowed error is a 1 px band along the
  // content's longer side.
  std::map<std::vector<std::string>, std::size_t> counts;
  std::map<std::string, const UnitRecord*> unit_by_id;
  for (const auto& u : units) unit_by_id[u.gpu_uid] = &u;
  for (const auto& u : units) {
    std::vector<std::string> path;
    counts[path]++;
    for (const auto& l : spec.layers) {
      path.push_back(std::get<std::string>(*u.find(l.group_by)));
      counts[path]++;
    }
  }
  for (const auto& [ppath, kids] : children) {
    const auto depth = ppath.size();
    const auto& layer = spec.layers[depth];
    if (layer.sizing != Sizing::kCount) continue;
    if (layer.op == LayoutOperator::kListX || layer.op == LayoutOperator::kListY) continue;
    const GroupRect* parent = by_path.at(ppath);
    const Rect content = shrink(parent->rect, spec.padding_at(parent->depth));
    const double total = static_cast<double>(counts[ppath]);
    for (const auto* k : kids) {
      const double expected = content.w * content.h * static_cast<double>(counts[k->path]) / total;
      const double actual = k->rect.w * k->rect.h;
      if (std::abs(expected - actual) > std::max(content.w, content.h) * 1.0 + 1e-6) {
        ++a.proportionality_failures;
        a.notes.push_back("count share off for group of " + std::to_string(counts[k->path]));
      }
    }
  }

  // Units sit inside their leaf group's content box and never overlap.
  std::map<std::vector<std::string>, std::vector<Rect>> unit_rects_by_leaf;
  for (const auto& [gpu, r] : g.unit_rects) {
    const auto* u = unit_by_id.at(gpu);
    std::vector<std::string> path;
    for (const auto& l : spec.layers) path.push_back(std::get<std::string>(*u->find(l.group_by)));
    const GroupRect* leaf = by_path.at(path);
    if (!contains(shrink(leaf->rect, spec.padding_at(leaf->depth)), r, tol)) ++a.containment_failures;
    unit_rects_by_leaf[path].push_back(r);
  }
  for (const auto& [path, rects] : unit_rects_by_leaf)
    for (std::size_t i = 0; i < rects.size(); ++i)
      for (std::size_t j = i + 1; j < rects.size(); ++j)
        if (overlap_area(rects[i], rects[j]) > tol) ++a.sibling_overlaps;
  return a;
}

inline std::vector<UnitRecord> random_units(std::mt19937_64& rng, std::size_t n) {
  std::vector<UnitRecord> units;
  std::uniform_int_distribution<int> part(0, 3), node(0, 60), proj(0, 11), state(0, 2);
  std::uniform_real_distribution<double> util(0.0, 100.0);
  static const char* kStates[] = {"running", "idle", "waiting"};
  for (std::size_t i = 0; i < n; ++i) {
    UnitRecord u;
    u.gpu_uid = "gpu" + std::to_string(i);
    u.attributes["partition"] = "p" + std::to_string(part(rng));
    u.attributes["node"] = "n" + std::to_string(node(rng));
    u.attributes["project"] = "proj" + std::to_string(proj(rng));
    u.attributes["workload_state"] = std::string(kStates[state(rng)]);
    u.attributes["utilization_pct"] = util(rng);
    u.attributes["gpu_index"] = static_cast<double>(i % 8);
    units.push_back(std::move(u));
  }
  return units;
}

inline LayoutSpec random_spec(std::mt19937_64& rng) {
  static const char* kAttrs[] = {"partition", "project", "workload_state", "node"};
  static const LayoutOperator kOps[] = {LayoutOperator::kPack, LayoutOperator::kFillX, LayoutOperator::kFillY,
                                        LayoutOperator::kListX, LayoutOperator::kListY};
  std::uniform_int_distribution<int> nlayers(0, 3), op(0, 4), coin(0, 1), attr(0, 3), sortk(0, 3);
  LayoutSpec s;
  const int layers = nlayers(rng);
  std::vector<int> order = {0, 1, 2, 3};
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < layers; ++i) {
    LayerSpec l;
    l.group_by = kAttrs[order[static_cast<std::size_t>(i)]];
    l.op = kOps[op(rng)];
    l.sizing = coin(rng) ? Sizing::kCount : Sizing::kUniform;
    switch (sortk(rng)) {
      case 0: break;
      case 1: l.sort = SortSpec{std::string(kCountSortKey), coin(rng) == 1}; break;
      case 2: l.sort = SortSpec{l.group_by, false}; break;
      default: l.sort = SortSpec{"utilization_pct", true}; break;
    }
    l.label = coin(rng) == 1;
    s.layers.push_back(l);
  }
  s.unit_operator = coin(rng) ? LayoutOperator::kPack : kOps[op(rng)];
  if (coin(rng)) s.unit_sort = SortSpec{"utilization_pct", coin(rng) == 1};
  std::uniform_real_distribution<double> pad(0.0, 3.0);
  double p = pad(rng) + 2.0;
  for (int i = 0; i <= layers + 1; ++i) {
    s.padding.push_back(p);
    p *= 0.5;
  }
  s.unit_size = 10.0;
  s.width = 1600;
  s.height = 1000;
  return s;
}

}  // namespace testing_support
