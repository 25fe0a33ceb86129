#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "clusterscape/error.hpp"

namespace clusterscape {

using Timestamp = std::int64_t;  // milliseconds since epoch

enum class Metric {
  kUtilization,
  kMemoryUsed,
  kPower,
  kTemperature,
  kNvlinkTx,
  kNvlinkRx,
};

inline constexpr std::array<Metric, 6> kAllMetrics = {
    Metric::kUtilization, Metric::kMemoryUsed, Metric::kPower,
    Metric::kTemperature, Metric::kNvlinkTx,   Metric::kNvlinkRx};

inline std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::kUtilization: return "utilization_pct";
    case Metric::kMemoryUsed: return "memory_used_mib";
    case Metric::kPower: return "power_watts";
    case Metric::kTemperature: return "temperature_c";
    case Metric::kNvlinkTx: return "nvlink_tx_mibps";
    case Metric::kNvlinkRx: return "nvlink_rx_mibps";
  }
  return "?";
}

inline std::optional<Metric> find_metric(std::string_view name) {
  for (Metric m : kAllMetrics)
    if (metric_name(m) == name) return m;
  return std::nullopt;
}

inline Metric parse_metric(std::string_view name) {
  if (auto m = find_metric(name)) return *m;
  throw ValidationError("unknown metric: " + std::string(name));
}

// Throws ValidationError if `value` is outside the metric's physical range.
inline void check_metric_value(Metric m, double value) {
  if (!std::isfinite(value)) throw ValidationError("non-finite value");
  if (value < 0.0) throw ValidationError("negative value for " + std::string(metric_name(m)));
  if (m == Metric::kUtilization && value > 100.0)
    throw ValidationError("utilization_pct above 100");
}

struct Point {
  Timestamp ts = 0;
  double value = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct MetricSample {
  Timestamp ts = 0;
  std::string gpu_uid;
  Metric metric = Metric::kUtilization;
  double value = 0.0;
  friend bool operator==(const MetricSample&, const MetricSample&) = default;
};

struct MetricSeries {
  std::string gpu_uid;
  Metric metric = Metric::kUtilization;
  std::vector<Point> points;  // strictly increasing ts

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
  friend bool operator==(const MetricSeries&, const MetricSeries&) = default;
};

inline std::vector<double> values_of(std::span<const Point> points) {
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.value);
  return out;
}

// ---------------------------------------------------------------------------
// Exporter line format
// ---------------------------------------------------------------------------

// One record per line, keys in this exact order:
//   {"ts":1000,"gpu":"n1g0","metric":"utilization_pct","value":85.0}
inline std::string serialize_sample(const MetricSample& s) {
  std::string out = "{\"ts\":";
  out += std::to_string(s.ts);
  out += ",\"gpu\":";
  out += nlohmann::json(s.gpu_uid).dump();
  out += ",\"metric\":\"";
  out += metric_name(s.metric);
  out += "\",\"value\":";
  out += nlohmann::json(s.value).dump();
  out += '}';
  return out;
}

inline MetricSample sample_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("record is not an object");
  for (const char* key : {"ts", "gpu", "metric", "value"})
    if (!j.contains(key)) throw ValidationError(std::string("missing key '") + key + "'");
  if (j.size() != 4) throw ValidationError("unexpected keys in sample record");
  const auto& ts = j["ts"];
  const auto& gpu = j["gpu"];
  const auto& metric = j["metric"];
  const auto& value = j["value"];
  if (!ts.is_number_integer()) throw ValidationError("'ts' must be an integer");
  if (!gpu.is_string() || gpu.get_ref<const std::string&>().empty())
    throw ValidationError("'gpu' must be a non-empty string");
  if (!metric.is_string()) throw ValidationError("'metric' must be a string");
  if (!value.is_number()) throw ValidationError("'value' must be a number");

  MetricSample s;
  s.ts = ts.get<Timestamp>();
  if (s.ts <= 0) throw ValidationError("'ts' must be positive");
  s.gpu_uid = gpu.get<std::string>();
  auto m = find_metric(metric.get_ref<const std::string&>());
  if (!m) throw ValidationError("unknown metric");
  s.metric = *m;
  s.value = value.get<double>();
  check_metric_value(s.metric, s.value);
  return s;
}

// Parses one exporter line (trailing '\n' optional).
inline MetricSample parse_sample_line(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line.begin(), line.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed record", e.byte == 0 ? 0 : e.byte - 1);
  }
  return sample_from_json(j);
}

// ---------------------------------------------------------------------------
// Summary statistics
// ---------------------------------------------------------------------------

struct StatisticType {
  enum class Kind { kMin, kMax, kMean, kMedian, kPercentile };
  Kind kind = Kind::kMean;
  double p = 0.0;  // only meaningful for kPercentile, in (0, 100)

  static StatisticType min() { return {Kind::kMin, 0.0}; }
  static StatisticType max() { return {Kind::kMax, 0.0}; }
  static StatisticType mean() { return {Kind::kMean, 0.0}; }
  static StatisticType median() { return {Kind::kMedian, 0.0}; }
  static StatisticType percentile(double p) {
    if (!(p > 0.0 && p < 100.0)) throw ValidationError("percentile must be in (0,100)");
    return {Kind::kPercentile, p};
  }
  friend bool operator==(const StatisticType&, const StatisticType&) = default;
};

inline nlohmann::ordered_json to_json(const StatisticType& s) {
  using K = StatisticType::Kind;
  nlohmann::ordered_json j;
  switch (s.kind) {
    case K::kMin: j["kind"] = "min"; break;
    case K::kMax: j["kind"] = "max"; break;
    case K::kMean: j["kind"] = "mean"; break;
    case K::kMedian: j["kind"] = "median"; break;
    case K::kPercentile:
      j["kind"] = "percentile";
      j["p"] = s.p;
      break;
  }
  return j;
}

template <class Json>
StatisticType statistic_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw ValidationError("statistic needs a 'kind'");
  const std::string kind = j["kind"].template get<std::string>();
  if (kind == "min") return StatisticType::min();
  if (kind == "max") return StatisticType::max();
  if (kind == "mean") return StatisticType::mean();
  if (kind == "median") return StatisticType::median();
  if (kind == "percentile") {
    if (!j.contains("p") || !j["p"].is_number()) throw ValidationError("percentile needs 'p'");
    return StatisticType::percentile(j["p"].template get<double>());
  }
  throw ValidationError("unknown statistic kind: " + kind);
}

// Linear interpolation between closest ranks on the sorted copy: rank position
// p/100 * (n-1), zero-based.
inline double percentile_of_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw EmptySeriesError();
  const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double compute_statistic(std::span<const double> values, StatisticType stat) {
  using K = StatisticType::Kind;
  if (values.empty()) throw EmptySeriesError();
  switch (stat.kind) {
    case K::kMin: return *std::min_element(values.begin(), values.end());
    case K::kMax: return *std::max_element(values.begin(), values.end());
    case K::kMean: {
      double sum = 0.0;
      for (double v : values) sum += v;
      return sum / static_cast<double>(values.size());
    }
    case K::kMedian:
    case K::kPercentile: {
      std::vector<double> sorted(values.begin(), values.end());
      std::sort(sorted.begin(), sorted.end());
      return percentile_of_sorted(sorted, stat.kind == K::kMedian ? 50.0 : stat.p);
    }
  }
  return 0.0;
}

inline double compute_statistic(const MetricSeries& series, StatisticType stat) {
  const auto values = values_of(series.points);
  return compute_statistic(std::span<const double>(values), stat);
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

struct Histogram {
  std::vector<double> bin_edges;  // B+1 strictly increasing
  std::vector<double> mass;       // B entries, sums to 1 unless `empty`
  bool empty = true;

  std::size_t bins() const { return mass.size(); }
  friend bool operator==(const Histogram&, const Histogram&) = default;
};

struct Domain {
  double lo = 0.0;
  double hi = 0.0;
};

// Fixed default domains keep histograms of different GPUs comparable.
inline std::optional<Domain> default_domain(Metric m) {
  if (m == Metric::kUtilization) return Domain{0.0, 100.0};
  return std::nullopt;
}

// Index of the bin holding `v`; the edge array is authoritative and values
// outside the domain fall into the first/last bin.
inline std::size_t bin_index(std::span<const double> edges, double v) {
  const std::size_t bins = edges.size() - 1;
  const double lo = edges.front();
  const double hi = edges.back();
  if (v <= lo) return 0;
  if (v >= hi) return bins - 1;
  auto idx = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
  idx = std::min(idx, bins - 1);
  while (idx > 0 && v < edges[idx]) --idx;
  while (idx + 1 < bins && v >= edges[idx + 1]) ++idx;
  return idx;
}

inline std::vector<double> equal_width_edges(Domain d, std::size_t bins) {
  std::vector<double> edges(bins + 1);
  const double width = (d.hi - d.lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) edges[i] = d.lo + width * static_cast<double>(i);
  edges.back() = d.hi;
  return edges;
}

inline Histogram build_histogram(std::span<const double> values, std::size_t bins,
                                 std::optional<Domain> domain) {
  if (bins < 1) throw ValidationError("bins must be >= 1");
  Domain d{0.0, 1.0};
  if (domain) {
    d = *domain;
  } else if (!values.empty()) {
    auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    d = {*mn, *mx};
  }
  if (!std::isfinite(d.lo) || !std::isfinite(d.hi) || d.lo > d.hi)
    throw ValidationError("invalid histogram domain");
  if (d.lo == d.hi) d = {d.lo - 0.5, d.hi + 0.5};

  Histogram h;
  h.bin_edges = equal_width_edges(d, bins);
  h.mass.assign(bins, 0.0);
  h.empty = values.empty();
  if (h.empty) return h;
  std::vector<std::size_t> counts(bins, 0);
  for (double v : values) ++counts[bin_index(h.bin_edges, v)];
  const auto n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < bins; ++i) h.mass[i] = static_cast<double>(counts[i]) / n;
  return h;
}

inline Histogram build_histogram(const MetricSeries& series, std::size_t bins,
                                 std::optional<Domain> domain = std::nullopt) {
  if (!domain) domain = default_domain(series.metric);
  const auto values = values_of(series.points);
  return build_histogram(std::span<const double>(values), bins, domain);
}

inline nlohmann::ordered_json to_json(const Histogram& h) {
  nlohmann::ordered_json j;
  j["bin_edges"] = h.bin_edges;
  j["mass"] = h.mass;
  j["empty"] = h.empty;
  return j;
}

// ---------------------------------------------------------------------------
// Downsampling
// ---------------------------------------------------------------------------

// Min/max-per-bucket reduction. Series of at most `max_points` points are
// returned unchanged; otherwise the endpoints are kept and the interior is cut
// into (max_points-2)/2 equal time buckets, each contributing its minimum and
// maximum point in time order.
inline MetricSeries downsample(const MetricSeries& series, std::size_t max_points) {
  if (max_points < 4) throw ValidationError("max_points must be >= 4");
  const auto& pts = series.points;
  if (pts.size() <= max_points) return series;

  MetricSeries out{series.gpu_uid, series.metric, {}};
  const std::size_t buckets = (max_points - 2) / 2;
  const double t0 = static_cast<double>(pts.front().ts);
  const double span = static_cast<double>(pts.back().ts) - t0;

  out.points.reserve(max_points);
  out.points.push_back(pts.front());
  std::size_t i = 1;
  const std::size_t last = pts.size() - 1;
  for (std::size_t b = 0; b < buckets && i < last; ++b) {
    const double upper = t0 + span * static_cast<double>(b + 1) / static_cast<double>(buckets);
    std::size_t lo_idx = i, hi_idx = i;
    std::size_t j = i;
    for (; j < last && (b + 1 == buckets || static_cast<double>(pts[j].ts) < upper); ++j) {
      if (pts[j].value < pts[lo_idx].value) lo_idx = j;
      if (pts[j].value > pts[hi_idx].value) hi_idx = j;
    }
    if (j == i) continue;  // empty bucket
    const auto first = std::min(lo_idx, hi_idx);
    const auto second = std::max(lo_idx, hi_idx);
    out.points.push_back(pts[first]);
    if (second != first) out.points.push_back(pts[second]);
    i = j;
  }
  out.points.push_back(pts.back());
  return out;
}

inline nlohmann::ordered_json to_json(const MetricSeries& s) {
  nlohmann::ordered_json j;
  j["gpu"] = s.gpu_uid;
  j["metric"] = metric_name(s.metric);
  auto pts = nlohmann::ordered_json::array();
  for (const auto& p : s.points) pts.push_back({p.ts, p.value});
  j["points"] = std::move(pts);
  return j;
}

}  // namespace clusterscape
