#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "clusterscape/error.hpp"

namespace clusterscape {

// Categorical (string) or numeric attribute value.
using AttrValue = std::variant<std::string, double>;

inline bool is_numeric(const AttrValue& v) { return std::holds_alternative<double>(v); }

inline std::string attr_to_string(const AttrValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  return nlohmann::json(std::get<double>(v)).dump();
}

struct UnitRecord {
  std::string gpu_uid;
  std::map<std::string, AttrValue> attributes;

  const AttrValue* find(const std::string& name) const {
    auto it = attributes.find(name);
    return it == attributes.end() ? nullptr : &it->second;
  }
};

// "n2" < "n10": digit runs compare by value.
inline bool natural_less(std::string_view a, std::string_view b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const bool da = std::isdigit(static_cast<unsigned char>(a[i])) != 0;
    const bool db = std::isdigit(static_cast<unsigned char>(b[j])) != 0;
    if (da && db) {
      std::size_t ie = i, je = j;
      while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
      while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
      auto ra = a.substr(i, ie - i);
      auto rb = b.substr(j, je - j);
      while (ra.size() > 1 && ra.front() == '0') ra.remove_prefix(1);
      while (rb.size() > 1 && rb.front() == '0') rb.remove_prefix(1);
      if (ra.size() != rb.size()) return ra.size() < rb.size();
      if (ra != rb) return ra < rb;
      i = ie;
      j = je;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  if ((a.size() - i) != (b.size() - j)) return (a.size() - i) < (b.size() - j);
  return a < b;
}

// Numbers order before strings.
inline bool attr_less(const AttrValue& a, const AttrValue& b) {
  if (is_numeric(a) != is_numeric(b)) return is_numeric(a);
  if (is_numeric(a)) return std::get<double>(a) < std::get<double>(b);
  return natural_less(std::get<std::string>(a), std::get<std::string>(b));
}

// ---------------------------------------------------------------------------
// Spec types
// ---------------------------------------------------------------------------

enum class LayoutOperator { kPack, kFillX, kFillY, kListX, kListY };
enum class Sizing { kUniform, kCount };

inline std::string_view operator_name(LayoutOperator op) {
  switch (op) {
    case LayoutOperator::kPack: return "Pack";
    case LayoutOperator::kFillX: return "FillX";
    case LayoutOperator::kFillY: return "FillY";
    case LayoutOperator::kListX: return "ListX";
    case LayoutOperator::kListY: return "ListY";
  }
  return "?";
}

inline LayoutOperator parse_operator(std::string_view s) {
  for (auto op : {LayoutOperator::kPack, LayoutOperator::kFillX, LayoutOperator::kFillY,
                  LayoutOperator::kListX, LayoutOperator::kListY})
    if (operator_name(op) == s) return op;
  throw SpecError("unknown layout operator: " + std::string(s));
}

inline std::string_view sizing_name(Sizing s) { return s == Sizing::kUniform ? "Uniform" : "Count"; }

inline Sizing parse_sizing(std::string_view s) {
  if (s == "Uniform") return Sizing::kUniform;
  if (s == "Count") return Sizing::kCount;
  throw SpecError("unknown sizing: " + std::string(s));
}

// Sort key for sibling groups. "#count" sorts by descendant unit count; the
// group_by attribute sorts by group key; anything else sorts by the value on
// the group's first-seen unit.
inline constexpr std::string_view kCountSortKey = "#count";

struct SortSpec {
  std::string attribute;
  bool ascending = true;
};

struct LayerSpec {
  std::string group_by;
  LayoutOperator op = LayoutOperator::kPack;
  Sizing sizing = Sizing::kUniform;
  std::optional<SortSpec> sort{};
  bool label = true;
};

struct LayoutSpec {
  std::vector<LayerSpec> layers;  // outermost first
  LayoutOperator unit_operator = LayoutOperator::kPack;
  std::optional<SortSpec> unit_sort;
  // Padding per depth (root = 0, units = layers.size() + 1). Shorter lists
  // repeat their last entry.
  std::vector<double> padding;
  double unit_size = 12.0;  // natural unit edge for List operators
  double width = 1200.0;
  double height = 800.0;

  double padding_at(std::size_t depth) const {
    if (padding.empty()) return 0.0;
    return padding[std::min(depth, padding.size() - 1)];
  }
};

inline void validate(const LayoutSpec& spec) {
  if (!(spec.width > 0.0) || !(spec.height > 0.0) || !std::isfinite(spec.width) ||
      !std::isfinite(spec.height))
    throw SpecError("viewport must be positive");
  if (!(spec.unit_size > 0.0)) throw SpecError("unit_size must be positive");
  for (std::size_t i = 0; i < spec.padding.size(); ++i) {
    if (!(spec.padding[i] >= 0.0) || !std::isfinite(spec.padding[i]))
      throw SpecError("padding must be non-negative");
    if (i > 0 && spec.padding[i] > spec.padding[i - 1])
      throw SpecError("padding must not grow with depth");
  }
  for (const auto& l : spec.layers)
    if (l.group_by.empty()) throw SpecError("layer without group_by");
}

// ---------------------------------------------------------------------------
// Hierarchy
// ---------------------------------------------------------------------------

struct GroupNode {
  std::string key;                // empty at the root
  std::vector<std::string> path;  // keys from the root
  std::size_t depth = 0;
  std::vector<GroupNode> children;
  std::vector<std::size_t> units;  // indices into the unit list, deepest level only
  std::size_t unit_count = 0;

  bool is_leaf_group() const { return children.empty(); }
};

namespace detail {

inline const AttrValue& require_attr(const UnitRecord& u, const std::string& name) {
  const auto* v = u.find(name);
  if (!v) throw SpecError("unit " + u.gpu_uid + " has no attribute '" + name + "'");
  return *v;
}

inline void sort_units(std::vector<std::size_t>& idx, const std::vector<UnitRecord>& units,
                       const std::optional<SortSpec>& sort) {
  if (!sort) return;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& va = require_attr(units[a], sort->attribute);
    const auto& vb = require_attr(units[b], sort->attribute);
    return sort->ascending ? attr_less(va, vb) : attr_less(vb, va);
  });
}

inline void build_level(GroupNode& node, std::vector<std::size_t> members,
                        const std::vector<UnitRecord>& units, const LayoutSpec& spec) {
  node.unit_count = members.size();
  if (node.depth == spec.layers.size()) {
    sort_units(members, units, spec.unit_sort);
    node.units = std::move(members);
    return;
  }
  const auto& layer = spec.layers[node.depth];
  std::vector<std::string> order;  // first-seen
  std::map<std::string, std::vector<std::size_t>> buckets;
  for (std::size_t i : members) {
    const auto& v = require_attr(units[i], layer.group_by);
    if (is_numeric(v))
      throw SpecError("group_by attribute '" + layer.group_by + "' is numeric on unit " +
                      units[i].gpu_uid);
    const auto& key = std::get<std::string>(v);
    auto [it, inserted] = buckets.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(i);
  }

  struct Entry {
    std::string key;
    AttrValue sort_value;
  };
  std::vector<Entry> entries;
  for (const auto& k : order) {
    AttrValue sv = k;
    if (layer.sort && layer.sort->attribute != layer.group_by) {
      if (layer.sort->attribute == kCountSortKey)
        sv = static_cast<double>(buckets[k].size());
      else
        sv = require_attr(units[buckets[k].front()], layer.sort->attribute);
    }
    entries.push_back({k, std::move(sv)});
  }
  const bool asc = !layer.sort || layer.sort->ascending;
  std::stable_sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
    return asc ? attr_less(a.sort_value, b.sort_value) : attr_less(b.sort_value, a.sort_value);
  });

  for (auto& e : entries) {
    GroupNode child;
    child.key = e.key;
    child.path = node.path;
    child.path.push_back(e.key);
    child.depth = node.depth + 1;
    build_level(child, std::move(buckets[e.key]), units, spec);
    node.children.push_back(std::move(child));
  }
}

}  // namespace detail

// Groups units by each layer's attribute, outermost first. Siblings are ordered
// by the layer's sort (default: key ascending), ties by first-seen order.
inline GroupNode build_hierarchy(const std::vector<UnitRecord>& units, const LayoutSpec& spec) {
  validate(spec);
  for (const auto& u : units)
    for (const auto& l : spec.layers) detail::require_attr(u, l.group_by);
  GroupNode root;
  std::vector<std::size_t> all(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) all[i] = i;
  detail::build_level(root, std::move(all), units, spec);
  return root;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

struct Rect {
  double x = 0, y = 0, w = 0, h = 0;
  double right() const { return x + w; }
  double bottom() const { return y + h; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

inline Rect shrink(const Rect& r, double pad) { return {r.x + pad, r.y + pad, r.w - 2 * pad, r.h - 2 * pad}; }

struct GroupRect {
  std::vector<std::string> path;
  std::size_t depth = 0;
  Rect rect;
  std::optional<std::pair<double, double>> label_anchor;  // top-left text anchor
};

struct LayoutGeometry {
  double width = 0, height = 0;
  std::vector<std::pair<std::string, Rect>> unit_rects;  // traversal order
  std::vector<GroupRect> group_rects;                    // pre-order, root first
};

namespace detail {

struct Extent {
  double w = 0, h = 0;
};

inline Extent arrange_natural(LayoutOperator op, Sizing sizing, const std::vector<Extent>& kids) {
  if (kids.empty()) return {0, 0};
  double sum_w = 0, sum_h = 0, max_w = 0, max_h = 0, area = 0;
  for (const auto& k : kids) {
    sum_w += k.w;
    sum_h += k.h;
    max_w = std::max(max_w, k.w);
    max_h = std::max(max_h, k.h);
    area += k.w * k.h;
  }
  const auto n = static_cast<double>(kids.size());
  const bool uniform = sizing == Sizing::kUniform;
  switch (op) {
    case LayoutOperator::kPack: {
      if (!uniform) {
        const double side = std::sqrt(area);
        return {std::max(side, max_w), std::max(side, max_h)};
      }
      const auto cols = std::ceil(std::sqrt(n));
      const auto rows = std::ceil(n / cols);
      return {cols * max_w, rows * max_h};
    }
    case LayoutOperator::kFillX:
    case LayoutOperator::kListX:
      return {uniform ? n * max_w : sum_w, max_h};
    case LayoutOperator::kFillY:
    case LayoutOperator::kListY:
      return {max_w, uniform ? n * max_h : sum_h};
  }
  return {0, 0};
}

inline Extent natural_extent(const GroupNode& node, const LayoutSpec& spec) {
  const double pad = spec.padding_at(node.depth);
  Extent inner;
  if (node.is_leaf_group()) {
    std::vector<Extent> cells(node.units.size(), Extent{spec.unit_size, spec.unit_size});
    inner = arrange_natural(spec.unit_operator, Sizing::kUniform, cells);
  } else {
    const auto& layer = spec.layers[node.depth];
    std::vector<Extent> kids;
    for (const auto& c : node.children) kids.push_back(natural_extent(c, spec));
    inner = arrange_natural(layer.op, layer.sizing, kids);
  }
  return {inner.w + 2 * pad, inner.h + 2 * pad};
}

// Splits [origin, origin+length) at cumulative weight fractions so adjacent
// pieces share exact boundaries.
inline std::vector<std::pair<double, double>> split_axis(double origin, double length,
                                                         const std::vector<double>& weights) {
  double total = 0;
  for (double w : weights) total += w;
  std::vector<std::pair<double, double>> out;
  double prefix = 0;
  double start = origin;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    prefix += weights[i];
    const double end = i + 1 == weights.size() ? origin + length : origin + length * (prefix / total);
    out.emplace_back(start, end - start);
    start = end;
  }
  return out;
}

inline std::vector<Rect> place_fill(bool along_x, const Rect& box, const std::vector<double>& weights) {
  std::vector<Rect> out;
  for (auto [pos, len] : split_axis(along_x ? box.x : box.y, along_x ? box.w : box.h, weights))
    out.push_back(along_x ? Rect{pos, box.y, len, box.h} : Rect{box.x, pos, box.w, len});
  return out;
}

inline std::vector<Rect> place_grid(const Rect& box, std::size_t n) {
  std::vector<Rect> out;
  if (n == 0) return out;
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const std::size_t rows = (n + cols - 1) / cols;
  const auto xs = split_axis(box.x, box.w, std::vector<double>(cols, 1.0));
  const auto ys = split_axis(box.y, box.h, std::vector<double>(rows, 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    const auto [x, w] = xs[i % cols];
    const auto [y, h] = ys[i / cols];
    out.push_back({x, y, w, h});
  }
  return out;
}

inline double worst_aspect(const std::vector<double>& row, double row_weight, double total,
                           const Rect& box, bool horizontal_strips) {
  const double strip = (horizontal_strips ? box.h : box.w) * row_weight / total;
  const double along = horizontal_strips ? box.w : box.h;
  double worst = 1.0;
  for (double wt : row) {
    const double len = along * wt / row_weight;
    const double r = len > strip ? len / strip : strip / len;
    worst = std::max(worst, r);
  }
  return worst;
}

// Ordered strip packing: children keep their order, areas are proportional to
// weight, and a strip is closed as soon as adding the next child would make
// the strip's worst aspect ratio worse.
inline std::vector<Rect> place_strips(const Rect& box, const std::vector<double>& weights) {
  std::vector<Rect> out;
  if (weights.empty()) return out;
  double total = 0;
  for (double w : weights) total += w;
  const bool horizontal = box.w >= box.h;  // strips run along the long side

  std::vector<std::vector<std::size_t>> strips;
  std::vector<double> strip_weights;
  std::vector<double> cur_w;
  std::vector<std::size_t> cur;
  double cur_sum = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!cur.empty()) {
      auto with = cur_w;
      with.push_back(weights[i]);
      const double before = worst_aspect(cur_w, cur_sum, total, box, horizontal);
      const double after = worst_aspect(with, cur_sum + weights[i], total, box, horizontal);
      if (after > before) {
        strips.push_back(cur);
        strip_weights.push_back(cur_sum);
        cur.clear();
        cur_w.clear();
        cur_sum = 0;
      }
    }
    cur.push_back(i);
    cur_w.push_back(weights[i]);
    cur_sum += weights[i];
  }
  strips.push_back(cur);
  strip_weights.push_back(cur_sum);

  out.resize(weights.size());
  const auto bands = split_axis(horizontal ? box.y : box.x, horizontal ? box.h : box.w, strip_weights);
  for (std::size_t s = 0; s < strips.size(); ++s) {
    std::vector<double> ws;
    for (auto i : strips[s]) ws.push_back(weights[i]);
    const auto [bpos, blen] = bands[s];
    const Rect band = horizontal ? Rect{box.x, bpos, box.w, blen} : Rect{bpos, box.y, blen, box.h};
    const auto cells = place_fill(horizontal, band, ws);
    for (std::size_t k = 0; k < cells.size(); ++k) out[strips[s][k]] = cells[k];
  }
  return out;
}

// Places children at scale * natural size in order, wrapping to a new
// row (ListX) or column (ListY) when the next child would cross the box edge.
inline std::optional<std::vector<Rect>> try_list(bool along_x, const Rect& box,
                                                 const std::vector<Extent>& sizes, double scale) {
  std::vector<Rect> out;
  const double main_len = along_x ? box.w : box.h;
  const double cross_len = along_x ? box.h : box.w;
  double main = 0, cross = 0, line = 0;
  for (const auto& e : sizes) {
    const double m = (along_x ? e.w : e.h) * scale;
    const double c = (along_x ? e.h : e.w) * scale;
    if (m > main_len) return std::nullopt;
    if (main > 0 && main + m > main_len) {
      main = 0;
      cross += line;
      line = 0;
    }
    out.push_back(along_x ? Rect{box.x + main, box.y + cross, m, c} : Rect{box.x + cross, box.y + main, c, m});
    main += m;
    line = std::max(line, c);
  }
  if (cross + line > cross_len) return std::nullopt;
  return out;
}

inline std::vector<Rect> place_list(bool along_x, const Rect& box, std::vector<Extent> sizes) {
  if (sizes.empty()) return {};
  if (auto r = try_list(along_x, box, sizes, 1.0)) return *r;
  double sum_main = 0, max_cross = 0;
  for (const auto& e : sizes) {
    sum_main += along_x ? e.w : e.h;
    max_cross = std::max(max_cross, along_x ? e.h : e.w);
  }
  double lo = std::min((along_x ? box.w : box.h) / sum_main, (along_x ? box.h : box.w) / max_cross) *
              (1.0 - 1e-9);
  auto best = try_list(along_x, box, sizes, lo);
  if (!best) throw DegenerateLayoutError("list children do not fit");
  double hi = 1.0;
  for (int it = 0; it < 50; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (auto r = try_list(along_x, box, sizes, mid)) {
      lo = mid;
      best = std::move(r);
    } else {
      hi = mid;
    }
  }
  return *best;
}

inline std::vector<Rect> place_children(LayoutOperator op, Sizing sizing, const Rect& box,
                                        const std::vector<double>& counts,
                                        const std::vector<Extent>& natural) {
  const bool uniform = sizing == Sizing::kUniform;
  const std::vector<double> weights = uniform ? std::vector<double>(counts.size(), 1.0) : counts;
  switch (op) {
    case LayoutOperator::kPack:
      return uniform ? place_grid(box, counts.size()) : place_strips(box, weights);
    case LayoutOperator::kFillX: return place_fill(true, box, weights);
    case LayoutOperator::kFillY: return place_fill(false, box, weights);
    case LayoutOperator::kListX:
    case LayoutOperator::kListY: {
      std::vector<Extent> sizes = natural;
      if (uniform) {
        Extent m;
        for (const auto& e : natural) m = {std::max(m.w, e.w), std::max(m.h, e.h)};
        std::fill(sizes.begin(), sizes.end(), m);
      }
      return place_list(op == LayoutOperator::kListX, box, std::move(sizes));
    }
  }
  return {};
}

inline void layout_node(const GroupNode& node, const Rect& rect, const std::vector<UnitRecord>& units,
                        const LayoutSpec& spec, LayoutGeometry& geo) {
  const double pad = spec.padding_at(node.depth);
  GroupRect gr{node.path, node.depth, rect, std::nullopt};
  const bool labelled = node.depth > 0 && spec.layers[node.depth - 1].label;
  if (labelled) gr.label_anchor = std::make_pair(rect.x + pad, rect.y + pad * 0.5);
  geo.group_rects.push_back(std::move(gr));

  const Rect content = shrink(rect, pad);
  if (!(content.w > 0) || !(content.h > 0))
    throw DegenerateLayoutError("no room inside group at depth " + std::to_string(node.depth));

  if (node.is_leaf_group()) {
    const std::size_t n = node.units.size();
    std::vector<double> ones(n, 1.0);
    std::vector<Extent> natural(n, Extent{spec.unit_size, spec.unit_size});
    const auto cells = place_children(spec.unit_operator, Sizing::kUniform, content, ones, natural);
    const double unit_pad = spec.padding_at(node.depth + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const Rect& c = cells[i];
      const double side = std::min(c.w, c.h) - 2 * unit_pad;
      if (side < 1.0)
        throw DegenerateLayoutError("unit " + units[node.units[i]].gpu_uid + " smaller than 1 px");
      geo.unit_rects.emplace_back(units[node.units[i]].gpu_uid,
                                  Rect{c.x + unit_pad, c.y + unit_pad, side, side});
    }
    return;
  }

  const auto& layer = spec.layers[node.depth];
  std::vector<double> counts;
  std::vector<Extent> natural;
  for (const auto& c : node.children) {
    counts.push_back(static_cast<double>(c.unit_count));
    if (layer.op == LayoutOperator::kListX || layer.op == LayoutOperator::kListY)
      natural.push_back(natural_extent(c, spec));
  }
  const auto rects = place_children(layer.op, layer.sizing, content, counts, natural);
  for (std::size_t i = 0; i < node.children.size(); ++i)
    layout_node(node.children[i], rects[i], units, spec, geo);
}

}  // namespace detail

inline LayoutGeometry compute_layout(const GroupNode& tree, const std::vector<UnitRecord>& units,
                                     const LayoutSpec& spec) {
  validate(spec);
  LayoutGeometry geo;
  geo.width = spec.width;
  geo.height = spec.height;
  detail::layout_node(tree, Rect{0, 0, spec.width, spec.height}, units, spec, geo);
  return geo;
}

inline LayoutGeometry compute_layout(const std::vector<UnitRecord>& units, const LayoutSpec& spec) {
  return compute_layout(build_hierarchy(units, spec), units, spec);
}

// ---------------------------------------------------------------------------
// Filters
// ---------------------------------------------------------------------------

struct FilterPredicate {
  enum class Kind { kEqualsAny, kRange };
  std::string attribute;
  Kind kind = Kind::kEqualsAny;
  std::set<std::string> values;  // kEqualsAny
  double lo = 0, hi = 0;         // kRange, inclusive
};

inline void validate(const FilterPredicate& p) {
  if (p.kind == FilterPredicate::Kind::kEqualsAny && p.values.empty())
    throw SpecError("equals-any filter on '" + p.attribute + "' has no values");
  if (p.kind == FilterPredicate::Kind::kRange && !(p.lo <= p.hi))
    throw SpecError("range filter on '" + p.attribute + "' has lo > hi");
}

inline bool matches(const UnitRecord& u, const FilterPredicate& p) {
  const auto& v = detail::require_attr(u, p.attribute);
  if (p.kind == FilterPredicate::Kind::kEqualsAny) return p.values.count(attr_to_string(v)) != 0;
  if (!is_numeric(v)) return false;
  const double x = std::get<double>(v);
  return x >= p.lo && x <= p.hi;
}

// Conjunction of all predicates; returns the retained units in input order.
inline std::vector<UnitRecord> apply_filters(const std::vector<UnitRecord>& units,
                                             const std::vector<FilterPredicate>& predicates) {
  for (const auto& p : predicates) {
    validate(p);
    for (const auto& u : units) detail::require_attr(u, p.attribute);
  }
  std::vector<UnitRecord> out;
  for (const auto& u : units) {
    bool keep = true;
    for (const auto& p : predicates) keep = keep && matches(u, p);
    if (keep) out.push_back(u);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Color scales
// ---------------------------------------------------------------------------

struct ColorScaleSpec {
  enum class Scale { kLinear, kLog, kQuantile, kQuantize };
  std::string attribute;
  Scale scale = Scale::kLinear;
  std::vector<std::string> scheme;
  std::optional<std::pair<double, double>> domain;  // nullopt = data driven
  bool remap_to_filtered = false;
  std::size_t bins = 0;  // 0 = scheme size
};

inline std::vector<std::string> default_scheme() {
  return {"#f7fbff", "#c6dbef", "#6baed6", "#2171b5", "#08306b"};
}

inline std::map<std::string, std::string> resolve_colors(const std::vector<UnitRecord>& units,
                                                         const ColorScaleSpec& spec,
                                                         const std::vector<FilterPredicate>& filters) {
  using Scale = ColorScaleSpec::Scale;
  const auto scheme = spec.scheme.empty() ? default_scheme() : spec.scheme;
  const std::size_t m = scheme.size();
  const std::size_t bins = spec.bins == 0 ? m : spec.bins;

  for (const auto& u : units) detail::require_attr(u, spec.attribute);
  const auto domain_units = spec.remap_to_filtered ? apply_filters(units, filters) : units;

  std::map<std::string, std::string> out;
  bool categorical = false;
  for (const auto& u : units) categorical = categorical || !is_numeric(*u.find(spec.attribute));

  if (categorical) {
    std::vector<std::string> cats;
    for (const auto& u : domain_units) cats.push_back(attr_to_string(*u.find(spec.attribute)));
    std::sort(cats.begin(), cats.end(), [](const auto& a, const auto& b) { return natural_less(a, b); });
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    for (const auto& u : units) {
      const auto c = attr_to_string(*u.find(spec.attribute));
      auto it = std::lower_bound(cats.begin(), cats.end(), c,
                                 [](const auto& a, const auto& b) { return natural_less(a, b); });
      const auto idx = static_cast<std::size_t>(it - cats.begin());
      out[u.gpu_uid] = scheme[(it != cats.end() && *it == c ? idx : 0) % m];
    }
    return out;
  }

  std::vector<double> observed;
  for (const auto& u : domain_units) observed.push_back(std::get<double>(*u.find(spec.attribute)));
  std::sort(observed.begin(), observed.end());

  double lo = 0, hi = 0;
  if (spec.domain) {
    std::tie(lo, hi) = *spec.domain;
  } else if (!observed.empty()) {
    lo = observed.front();
    hi = observed.back();
  }
  if (spec.scale == Scale::kLog && (!(lo > 0) || !(hi > 0)))
    throw SpecError("log scale needs a strictly positive domain");
  if (lo > hi) throw SpecError("color domain has lo > hi");

  auto index_for = [&](double v) -> std::size_t {
    auto pick = [&](double t) {
      t = std::clamp(t, 0.0, 1.0);
      return static_cast<std::size_t>(std::lround(t * static_cast<double>(m - 1)));
    };
    auto bin_color = [&](std::size_t bin) {
      if (bins <= 1) return std::size_t{0};
      return static_cast<std::size_t>(
          std::lround(static_cast<double>(bin) * static_cast<double>(m - 1) / static_cast<double>(bins - 1)));
    };
    switch (spec.scale) {
      case Scale::kLinear:
        return hi == lo ? 0 : pick((v - lo) / (hi - lo));
      case Scale::kLog:
        if (hi == lo) return 0;
        return pick((std::log(std::max(v, lo)) - std::log(lo)) / (std::log(hi) - std::log(lo)));
      case Scale::kQuantize: {
        if (hi == lo) return bin_color(0);
        const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        const auto bin = std::min(static_cast<std::size_t>(t * static_cast<double>(bins)), bins - 1);
        return bin_color(bin);
      }
      case Scale::kQuantile: {
        if (observed.empty()) return bin_color(0);
        const auto rank = static_cast<std::size_t>(
            std::lower_bound(observed.begin(), observed.end(), v) - observed.begin());
        const auto bin = std::min(rank * bins / observed.size(), bins - 1);
        return bin_color(bin);
      }
    }
    return 0;
  };

  for (const auto& u : units) out[u.gpu_uid] = scheme[index_for(std::get<double>(*u.find(spec.attribute)))];
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const SortSpec& s) {
  return {{"attribute", s.attribute}, {"order", s.ascending ? "asc" : "desc"}};
}

inline SortSpec sort_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("attribute") || !j["attribute"].is_string())
    throw SpecError("sort needs an 'attribute'");
  SortSpec s;
  s.attribute = j["attribute"].get<std::string>();
  if (j.contains("order")) {
    const auto o = j["order"].get<std::string>();
    if (o != "asc" && o != "desc") throw SpecError("sort order must be asc or desc");
    s.ascending = o == "asc";
  }
  return s;
}

inline nlohmann::ordered_json to_json(const LayoutSpec& s) {
  nlohmann::ordered_json j;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : s.layers) {
    nlohmann::ordered_json lj;
    lj["group_by"] = l.group_by;
    lj["operator"] = operator_name(l.op);
    lj["sizing"] = sizing_name(l.sizing);
    lj["sort"] = l.sort ? to_json(*l.sort) : nlohmann::ordered_json(nullptr);
    lj["label"] = l.label;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  j["unit_operator"] = operator_name(s.unit_operator);
  j["unit_sort"] = s.unit_sort ? to_json(*s.unit_sort) : nlohmann::ordered_json(nullptr);
  j["padding"] = s.padding;
  j["unit_size"] = s.unit_size;
  j["viewport"] = {{"width", s.width}, {"height", s.height}};
  return j;
}

inline LayoutSpec layout_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SpecError("layout spec must be an object");
  LayoutSpec s;
  try {
    if (j.contains("layers")) {
      for (const auto& lj : j.at("layers")) {
        LayerSpec l;
        l.group_by = lj.at("group_by").get<std::string>();
        if (lj.contains("operator")) l.op = parse_operator(lj["operator"].get<std::string>());
        if (lj.contains("sizing")) l.sizing = parse_sizing(lj["sizing"].get<std::string>());
        if (lj.contains("sort") && !lj["sort"].is_null()) l.sort = sort_from_json(lj["sort"]);
        if (lj.contains("label")) l.label = lj["label"].get<bool>();
        s.layers.push_back(std::move(l));
      }
    }
    if (j.contains("unit_operator")) s.unit_operator = parse_operator(j["unit_operator"].get<std::string>());
    if (j.contains("unit_sort") && !j["unit_sort"].is_null()) s.unit_sort = sort_from_json(j["unit_sort"]);
    if (j.contains("padding")) s.padding = j["padding"].get<std::vector<double>>();
    if (j.contains("unit_size")) s.unit_size = j["unit_size"].get<double>();
    if (j.contains("viewport")) {
      s.width = j["viewport"].at("width").get<double>();
      s.height = j["viewport"].at("height").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("bad layout spec: ") + e.what());
  }
  validate(s);
  return s;
}

inline FilterPredicate filter_from_json(const nlohmann::json& j) {
  FilterPredicate p;
  try {
    p.attribute = j.at("attribute").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "equals_any") {
      p.kind = FilterPredicate::Kind::kEqualsAny;
      for (const auto& v : j.at("values")) p.values.insert(v.is_string() ? v.get<std::string>() : v.dump());
    } else if (kind == "range") {
      p.kind = FilterPredicate::Kind::kRange;
      p.lo = j.at("lo").get<double>();
      p.hi = j.at("hi").get<double>();
    } else {
      throw SpecError("unknown filter kind: " + kind);
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("bad filter: ") + e.what());
  }
  validate(p);
  return p;
}

inline ColorScaleSpec color_spec_from_json(const nlohmann::json& j) {
  ColorScaleSpec c;
  try {
    c.attribute = j.at("attribute").get<std::string>();
    const auto scale = j.contains("scale") ? j["scale"].get<std::string>() : "linear";
    if (scale == "linear") c.scale = ColorScaleSpec::Scale::kLinear;
    else if (scale == "log") c.scale = ColorScaleSpec::Scale::kLog;
    else if (scale == "quantile") c.scale = ColorScaleSpec::Scale::kQuantile;
    else if (scale == "quantize") c.scale = ColorScaleSpec::Scale::kQuantize;
    else throw SpecError("unknown color scale: " + scale);
    if (j.contains("scheme")) c.scheme = j["scheme"].get<std::vector<std::string>>();
    if (j.contains("domain") && !j["domain"].is_null()) {
      const auto d = j["domain"].get<std::vector<double>>();
      if (d.size() != 2) throw SpecError("color domain must be [lo, hi]");
      c.domain = std::make_pair(d[0], d[1]);
    }
    if (j.contains("remap_to_filtered")) c.remap_to_filtered = j["remap_to_filtered"].get<bool>();
    if (j.contains("bins")) c.bins = j["bins"].get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("bad color spec: ") + e.what());
  }
  return c;
}

inline nlohmann::ordered_json to_json(const Rect& r) {
  return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}};
}

inline nlohmann::ordered_json to_json(const LayoutGeometry& g) {
  nlohmann::ordered_json j;
  j["viewport"] = {{"width", g.width}, {"height", g.height}};
  auto units = nlohmann::ordered_json::array();
  for (const auto& [gpu, r] : g.unit_rects) {
    nlohmann::ordered_json u;
    u["gpu"] = gpu;
    u["x"] = r.x;
    u["y"] = r.y;
    u["w"] = r.w;
    u["h"] = r.h;
    units.push_back(std::move(u));
  }
  auto groups = nlohmann::ordered_json::array();
  for (const auto& gr : g.group_rects) {
    nlohmann::ordered_json o;
    o["path"] = gr.path;
    o["depth"] = gr.depth;
    o["x"] = gr.rect.x;
    o["y"] = gr.rect.y;
    o["w"] = gr.rect.w;
    o["h"] = gr.rect.h;
    if (gr.label_anchor)
      o["label"] = {{"text", gr.path.empty() ? "" : gr.path.back()},
                    {"x", gr.label_anchor->first},
                    {"y", gr.label_anchor->second}};
    else
      o["label"] = nullptr;
    groups.push_back(std::move(o));
  }
  j["units"] = std::move(units);
  j["groups"] = std::move(groups);
  return j;
}

}  // namespace clusterscape
