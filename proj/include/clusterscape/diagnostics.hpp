#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "clusterscape/error.hpp"
#include "clusterscape/metrics.hpp"

namespace clusterscape {

// ---------------------------------------------------------------------------
// Distribution and series distances
// ---------------------------------------------------------------------------

// sqrt of the base-2 Jensen-Shannon divergence, in [0, 1]. nullopt when either
// histogram is empty.
inline std::optional<double> jsd_distance(const Histogram& p, const Histogram& q) {
  if (p.bin_edges != q.bin_edges || p.mass.size() != q.mass.size())
    throw ShapeError("histograms have different bins");
  if (p.empty || q.empty) return std::nullopt;
  double div = 0.0;
  for (std::size_t i = 0; i < p.mass.size(); ++i) {
    const double a = p.mass[i];
    const double b = q.mass[i];
    const double m = 0.5 * (a + b);
    const double ta = a > 0 ? a * std::log2(a / m) : 0.0;
    const double tb = b > 0 ? b * std::log2(b / m) : 0.0;
    div += 0.5 * (ta + tb);
  }
  return std::sqrt(std::clamp(div, 0.0, 1.0));
}

enum class DistanceMethod { kJsd, kEuclidean, kCorrelation };

inline std::string_view method_name(DistanceMethod m) {
  switch (m) {
    case DistanceMethod::kJsd: return "jsd";
    case DistanceMethod::kEuclidean: return "euclidean";
    case DistanceMethod::kCorrelation: return "correlation";
  }
  return "?";
}

inline DistanceMethod parse_method(std::string_view s) {
  for (auto m : {DistanceMethod::kJsd, DistanceMethod::kEuclidean, DistanceMethod::kCorrelation})
    if (method_name(m) == s) return m;
  throw ValidationError("unknown distance method: " + std::string(s));
}

inline constexpr std::size_t kMaxResampleGrid = 512;

// Linear interpolation of `pts` at time t (t inside the series' span).
inline double interpolate_at(const std::vector<Point>& pts, double t) {
  auto it = std::lower_bound(pts.begin(), pts.end(), t,
                             [](const Point& p, double x) { return static_cast<double>(p.ts) < x; });
  if (it == pts.begin()) return pts.front().value;
  if (it == pts.end()) return pts.back().value;
  const Point& b = *it;
  const Point& a = *(it - 1);
  if (static_cast<double>(b.ts) == t) return b.value;
  const double f = (t - static_cast<double>(a.ts)) / static_cast<double>(b.ts - a.ts);
  return a.value + f * (b.value - a.value);
}

// Resamples both series onto a shared uniform grid spanning their overlap;
// grid length is min(len a, len b, 512). Empty when the overlap is degenerate.
inline std::pair<std::vector<double>, std::vector<double>> resample_pair(const MetricSeries& a,
                                                                         const MetricSeries& b) {
  if (a.size() < 2 || b.size() < 2) return {};
  const double start = static_cast<double>(std::max(a.points.front().ts, b.points.front().ts));
  const double end = static_cast<double>(std::min(a.points.back().ts, b.points.back().ts));
  if (!(end > start)) return {};
  const std::size_t n = std::min({a.size(), b.size(), kMaxResampleGrid});
  std::vector<double> xa(n), xb(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = k + 1 == n ? end : start + (end - start) * static_cast<double>(k) / static_cast<double>(n - 1);
    xa[k] = interpolate_at(a.points, t);
    xb[k] = interpolate_at(b.points, t);
  }
  return {std::move(xa), std::move(xb)};
}

// euclidean: l2 norm of the difference / sqrt(grid length).
// correlation: 1 - Pearson r, nullopt when either side is constant.
inline std::optional<double> series_distance(const MetricSeries& a, const MetricSeries& b,
                                             DistanceMethod method) {
  if (method == DistanceMethod::kJsd) throw ValidationError("jsd applies to histograms");
  auto [xa, xb] = resample_pair(a, b);
  if (xa.empty()) return std::nullopt;
  const auto n = static_cast<double>(xa.size());
  if (method == DistanceMethod::kEuclidean) {
    double ss = 0;
    for (std::size_t i = 0; i < xa.size(); ++i) ss += (xa[i] - xb[i]) * (xa[i] - xb[i]);
    return std::sqrt(ss) / std::sqrt(n);
  }
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < xa.size(); ++i) {
    ma += xa[i];
    mb += xb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < xa.size(); ++i) {
    sab += (xa[i] - ma) * (xb[i] - mb);
    saa += (xa[i] - ma) * (xa[i] - ma);
    sbb += (xb[i] - mb) * (xb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  const double r = std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
  return 1.0 - r;
}

// ---------------------------------------------------------------------------
// Distance matrices and clustering
// ---------------------------------------------------------------------------

struct DistanceMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> d;
  DistanceMethod method = DistanceMethod::kJsd;

  std::size_t size() const { return labels.size(); }
};

inline void validate(const DistanceMatrix& m) {
  const std::size_t n = m.labels.size();
  if (m.d.size() != n) throw ShapeError("distance matrix size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (m.d[i].size() != n) throw ShapeError("distance matrix is not square");
    if (m.d[i][i] != 0.0) throw ValidationError("distance matrix diagonal must be zero");
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(m.d[i][j]) || m.d[i][j] < 0) throw ValidationError("invalid distance");
      if (m.d[i][j] != m.d[j][i]) throw ValidationError("distance matrix is not symmetric");
    }
  }
}

// Builds a symmetric matrix from a pairwise function returning nullopt for
// not-evaluable pairs; those are filled with the largest evaluable distance
// (or `fallback` when nothing was evaluable).
template <class PairFn>
DistanceMatrix build_distance_matrix(std::vector<std::string> labels, DistanceMethod method,
                                     PairFn&& pair_distance, double fallback) {
  const std::size_t n = labels.size();
  DistanceMatrix m{std::move(labels), std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0)), method};
  std::vector<std::pair<std::size_t, std::size_t>> missing;
  double largest = -1;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (auto v = pair_distance(i, j)) {
        m.d[i][j] = m.d[j][i] = *v;
        largest = std::max(largest, *v);
      } else {
        missing.emplace_back(i, j);
      }
    }
  const double fill = largest < 0 ? fallback : largest;
  for (auto [i, j] : missing) m.d[i][j] = m.d[j][i] = fill;
  return m;
}

struct ClusterCut {
  std::optional<double> threshold;  // stop when min linkage > threshold
  std::optional<std::size_t> k;     // stop at k clusters

  static ClusterCut at_threshold(double t) { return {t, std::nullopt}; }
  static ClusterCut at_k(std::size_t k) { return {std::nullopt, k}; }
};

inline constexpr double kDefaultJsdCut = 0.3;

struct ClusterAssignment {
  std::vector<std::string> labels;
  std::vector<int> cluster_of;  // parallel to labels
  ClusterCut cut;
  std::vector<double> merge_distances;

  int cluster_count() const {
    int mx = -1;
    for (int c : cluster_of) mx = std::max(mx, c);
    return mx + 1;
  }
};

// Average-linkage agglomerative clustering. Each step merges the pair with the
// smallest mean pairwise distance; ties go to the lexicographically smallest
// (i, j) where a cluster is identified by its smallest member index. Cluster
// ids are renumbered by first member.
inline ClusterAssignment agglomerative_cluster(const DistanceMatrix& matrix, ClusterCut cut) {
  validate(matrix);
  const std::size_t n = matrix.size();
  ClusterAssignment out;
  out.labels = matrix.labels;
  out.cut = cut;
  if (n == 0) return out;
  if (!cut.threshold && !cut.k) throw ValidationError("cluster cut needs a threshold or k");
  if (cut.k && (*cut.k < 1 || *cut.k > n)) throw ValidationError("k must be in [1, n]");
  if (cut.threshold && !(*cut.threshold > 0)) throw ValidationError("threshold must be > 0");

  // Active clusters keyed by smallest member; pair_sum holds the sum of
  // original distances between members.
  std::vector<std::vector<std::size_t>> members(n);
  std::vector<bool> active(n, true);
  std::vector<std::vector<double>> pair_sum = matrix.d;
  for (std::size_t i = 0; i < n; ++i) members[i] = {i};
  std::size_t clusters = n;

  while (clusters > 1) {
    if (cut.k && clusters <= *cut.k) break;
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!active[j]) continue;
        const double link = pair_sum[i][j] / static_cast<double>(members[i].size() * members[j].size());
        if (link < best) {
          best = link;
          bi = i;
          bj = j;
        }
      }
    }
    if (!cut.k && cut.threshold && best > *cut.threshold) break;
    out.merge_distances.push_back(best);
    for (std::size_t c = 0; c < n; ++c) {
      if (!active[c] || c == bi || c == bj) continue;
      pair_sum[bi][c] += pair_sum[bj][c];
      pair_sum[c][bi] = pair_sum[bi][c];
    }
    members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
    members[bj].clear();
    active[bj] = false;
    --clusters;
  }

  out.cluster_of.assign(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.cluster_of[i] != -1) continue;
    // i is the smallest unassigned index, hence the first member of its cluster.
    std::size_t root = i;
    for (std::size_t c = 0; c < n; ++c)
      if (active[c] && std::find(members[c].begin(), members[c].end(), i) != members[c].end()) root = c;
    for (std::size_t m : members[root]) out.cluster_of[m] = next;
    ++next;
  }
  return out;
}

inline nlohmann::ordered_json to_json(const ClusterAssignment& a) {
  nlohmann::ordered_json j;
  auto assign = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < a.labels.size(); ++i)
    assign.push_back({{"gpu", a.labels[i]}, {"cluster_id", a.cluster_of[i]}});
  j["assignment"] = std::move(assign);
  j["cluster_count"] = a.cluster_count();
  j["linkage"] = "average";
  nlohmann::ordered_json cut;
  cut["threshold"] = a.cut.threshold ? nlohmann::ordered_json(*a.cut.threshold) : nlohmann::ordered_json(nullptr);
  cut["k"] = a.cut.k ? nlohmann::ordered_json(*a.cut.k) : nlohmann::ordered_json(nullptr);
  j["cut"] = std::move(cut);
  return j;
}

inline nlohmann::ordered_json to_json(const DistanceMatrix& m) {
  nlohmann::ordered_json j;
  j["labels"] = m.labels;
  j["method"] = method_name(m.method);
  j["d"] = m.d;
  return j;
}

// Categorical palette for cluster ids; ids beyond the palette share
// kOverflowColor.
inline const std::vector<std::string>& cluster_palette() {
  static const std::vector<std::string> palette = {
      "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
      "#e377c2", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#98df8a"};
  return palette;
}
inline constexpr const char* kOverflowColor = "#7f7f7f";

inline std::map<int, std::string> cluster_colors(const ClusterAssignment& a,
                                                 const std::vector<std::string>& palette = cluster_palette(),
                                                 const std::string& overflow = kOverflowColor) {
  std::map<int, std::string> out;
  for (int id : a.cluster_of)
    out[id] = static_cast<std::size_t>(id) < palette.size() ? palette[static_cast<std::size_t>(id)] : overflow;
  return out;
}

// ---------------------------------------------------------------------------
// Bivariate outliers
// ---------------------------------------------------------------------------

struct BivariatePoint {
  Timestamp ts = 0;
  double x = 0, y = 0;
  std::string gpu_uid;  // optional provenance
};

struct ScoredPoint {
  Timestamp ts = 0;
  double x = 0, y = 0;
  double d2 = 0;
  bool flagged = false;
  std::string gpu_uid;
};

struct OutlierReport {
  std::string metric_x, metric_y;
  std::vector<ScoredPoint> points;
  double alpha = 0.01;
  double cutoff = 0;
  std::array<double, 2> mean{};
  std::array<double, 4> covariance{};  // row-major 2x2, after any ridge
  bool ridge_applied = false;
};

// Upper (1 - alpha) quantile of chi-squared with 2 degrees of freedom.
inline double chi2_df2_cutoff(double alpha) { return -2.0 * std::log(alpha); }

inline constexpr double kSingularDeterminant = 1e-12;
inline constexpr double kRidgeEpsilon = 1e-6;

struct OutlierOptions {
  bool ridge = true;
};

inline OutlierReport mahalanobis_outliers(const std::vector<BivariatePoint>& pts, double alpha,
                                          OutlierOptions opts = {}) {
  if (pts.size() < 3) throw InsufficientDataError("need at least 3 points");
  if (!(alpha > 0.0 && alpha <= 0.5)) throw ValidationError("alpha must be in (0, 0.5]");
  OutlierReport r;
  r.alpha = alpha;
  r.cutoff = chi2_df2_cutoff(alpha);
  const auto n = static_cast<double>(pts.size());
  double mx = 0, my = 0;
  for (const auto& p : pts) {
    mx += p.x;
    my += p.y;
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& p : pts) {
    sxx += (p.x - mx) * (p.x - mx);
    sxy += (p.x - mx) * (p.y - my);
    syy += (p.y - my) * (p.y - my);
  }
  sxx /= n - 1;
  sxy /= n - 1;
  syy /= n - 1;
  double det = sxx * syy - sxy * sxy;
  const double trace = sxx + syy;
  if (opts.ridge && std::abs(det) < kSingularDeterminant && trace > 0) {
    const double ridge = kRidgeEpsilon * trace / 2.0;
    sxx += ridge;
    syy += ridge;
    det = sxx * syy - sxy * sxy;
    r.ridge_applied = true;
  }
  r.mean = {mx, my};
  r.covariance = {sxx, sxy, sxy, syy};
  const bool degenerate = trace == 0 || det <= 0;
  for (const auto& p : pts) {
    ScoredPoint s{p.ts, p.x, p.y, 0.0, false, p.gpu_uid};
    if (!degenerate) {
      const double dx = p.x - mx;
      const double dy = p.y - my;
      s.d2 = (syy * dx * dx - 2 * sxy * dx * dy + sxx * dy * dy) / det;
    }
    s.flagged = s.d2 > r.cutoff;
    r.points.push_back(std::move(s));
  }
  return r;
}

// Indices of points inside an axis-aligned brush (inclusive).
inline std::vector<std::size_t> brush_select(const OutlierReport& r, double x0, double x1, double y0,
                                             double y1) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const auto& p = r.points[i];
    if (p.x >= std::min(x0, x1) && p.x <= std::max(x0, x1) && p.y >= std::min(y0, y1) &&
        p.y <= std::max(y0, y1))
      out.push_back(i);
  }
  return out;
}

// Unique ascending timestamps of the selected points.
inline std::vector<Timestamp> outlier_timestamps(const OutlierReport& r,
                                                 const std::vector<std::size_t>& selection) {
  std::set<Timestamp> ts;
  for (std::size_t i : selection) {
    if (i >= r.points.size()) throw ValidationError("selection index out of range");
    ts.insert(r.points[i].ts);
  }
  return {ts.begin(), ts.end()};
}

inline nlohmann::ordered_json to_json(const OutlierReport& r) {
  nlohmann::ordered_json j;
  j["metric_x"] = r.metric_x;
  j["metric_y"] = r.metric_y;
  j["alpha"] = r.alpha;
  j["cutoff"] = r.cutoff;
  j["mean"] = r.mean;
  j["covariance"] = r.covariance;
  j["ridge_applied"] = r.ridge_applied;
  std::size_t flagged = 0;
  auto pts = nlohmann::ordered_json::array();
  for (const auto& p : r.points) {
    nlohmann::ordered_json pj;
    pj["ts"] = p.ts;
    pj["gpu"] = p.gpu_uid;
    pj["x"] = p.x;
    pj["y"] = p.y;
    pj["d2"] = p.d2;
    pj["flagged"] = p.flagged;
    flagged += p.flagged ? 1 : 0;
    pts.push_back(std::move(pj));
  }
  j["flagged_count"] = flagged;
  j["points"] = std::move(pts);
  return j;
}

}  // namespace clusterscape
