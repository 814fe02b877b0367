#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "floorplan/errors.hpp"
#include "floorplan/geometry.hpp"
#include "floorplan/palette.hpp"

namespace floorplan {

// Bubble diagram: rooms with a category, joined by "connection" edges.
struct LayoutGraph {
  struct Node {
    int id = 0;
    int category = 0;
    std::optional<Point> centroid;
    bool operator==(const Node&) const = default;
  };

  std::vector<Node> nodes;
  // Unordered pairs; stored as given so validation can report defects.
  std::vector<std::pair<int, int>> edges;

  int size() const { return static_cast<int>(nodes.size()); }

  std::vector<std::pair<int, int>> edge_set() const {
    std::set<std::pair<int, int>> s;
    for (auto [a, b] : edges) s.insert(std::minmax(a, b));
    return {s.begin(), s.end()};
  }

  bool operator==(const LayoutGraph& o) const {
    return nodes == o.nodes && edge_set() == o.edge_set();
  }
};

// Rule strings are part of the service contract; clients match on them.
namespace rules {
inline constexpr const char* kEmpty = "graph must have ≥1 node";
inline constexpr const char* kNodeId = "non-contiguous node id";
inline constexpr const char* kUnknownCategory = "unknown category";
inline constexpr const char* kNonRoom = "non-room category";
inline constexpr const char* kSelfLoop = "self-loop";
inline constexpr const char* kDuplicateEdge = "duplicate edge";
inline constexpr const char* kDanglingEdge = "edge references unknown node";
inline constexpr std::array<const char*, 7> kAll{kEmpty,   kNodeId,        kUnknownCategory,
                                                 kNonRoom, kSelfLoop,      kDuplicateEdge,
                                                 kDanglingEdge};
}  // namespace rules

struct Violation {
  std::string rule;
  std::string subject;  // "graph", "node 3", "edge (1,2)"

  std::string message() const { return subject + ": " + rule; }
  bool operator==(const Violation&) const = default;
};

inline std::vector<Violation> validate_graph(const LayoutGraph& g, const ClassPalette& palette) {
  std::vector<Violation> out;
  if (g.nodes.empty()) out.push_back({rules::kEmpty, "graph"});
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    const std::string subject = "node " + std::to_string(i);
    if (n.id != static_cast<int>(i)) out.push_back({rules::kNodeId, subject});
    if (!palette.contains(n.category)) out.push_back({rules::kUnknownCategory, subject});
    else if (!palette.is_room(n.category)) out.push_back({rules::kNonRoom, subject});
  }
  std::set<std::pair<int, int>> seen;
  for (auto [a, b] : g.edges) {
    const std::string subject = "edge (" + std::to_string(a) + "," + std::to_string(b) + ")";
    if (a < 0 || b < 0 || a >= g.size() || b >= g.size())
      out.push_back({rules::kDanglingEdge, subject});
    if (a == b) out.push_back({rules::kSelfLoop, subject});
    else if (!seen.insert(std::minmax(a, b)).second)
      out.push_back({rules::kDuplicateEdge, subject});
  }
  return out;
}

inline void require_valid(const LayoutGraph& g, const ClassPalette& palette) {
  const auto v = validate_graph(g, palette);
  if (v.empty()) return;
  std::string msg = "invalid layout graph:";
  for (const auto& x : v) msg += " [" + x.message() + "]";
  throw InvalidGraph(msg);
}

inline std::vector<int> node_degrees(const LayoutGraph& g) {
  std::vector<int> deg(g.nodes.size(), 0);
  for (auto [a, b] : g.edge_set()) {
    ++deg[a];
    ++deg[b];
  }
  return deg;
}

// Row i: one-hot room category followed by degree_i / N.
inline Eigen::MatrixXd encode_node_features(const LayoutGraph& g, const ClassPalette& palette) {
  require_valid(g, palette);
  const int n = g.size();
  const int rooms = palette.num_room_classes();
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, rooms + 1);
  const auto deg = node_degrees(g);
  for (int i = 0; i < n; ++i) {
    x(i, palette.room_index(g.nodes[i].category)) = 1.0;
    x(i, rooms) = static_cast<double>(deg[i]) / n;
  }
  return x;
}

// D^-1/2 (A + I) D^-1/2 with D the self-looped degree.
inline Eigen::MatrixXd normalized_adjacency(const LayoutGraph& g) {
  const int n = g.size();
  if (n < 1) throw InvalidGraph("normalized adjacency of an empty graph");
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  for (auto [u, v] : g.edge_set()) {
    if (u == v) continue;
    a(u, v) = a(v, u) = 1.0;
  }
  Eigen::VectorXd inv_sqrt(n);
  for (int i = 0; i < n; ++i) inv_sqrt(i) = 1.0 / std::sqrt(a.row(i).sum());
  return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

// perm[old_id] = new_id.
inline LayoutGraph permute_graph(const LayoutGraph& g, const std::vector<int>& perm) {
  LayoutGraph out;
  out.nodes.resize(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    auto n = g.nodes[i];
    n.id = perm[i];
    out.nodes[perm[i]] = n;
  }
  for (auto [a, b] : g.edges) out.edges.emplace_back(perm[a], perm[b]);
  return out;
}

// Category-preserving isomorphism by backtracking; fine for room-scale graphs.
inline bool isomorphic(const LayoutGraph& a, const LayoutGraph& b) {
  const int n = a.size();
  if (n != b.size()) return false;
  const auto ea = a.edge_set(), eb = b.edge_set();
  if (ea.size() != eb.size()) return false;
  std::vector<std::vector<char>> adj_a(n, std::vector<char>(n, 0)), adj_b = adj_a;
  for (auto [u, v] : ea) adj_a[u][v] = adj_a[v][u] = 1;
  for (auto [u, v] : eb) adj_b[u][v] = adj_b[v][u] = 1;
  const auto da = node_degrees(a), db = node_degrees(b);

  std::vector<int> map(n, -1);
  std::vector<char> used(n, 0);
  auto extend = [&](auto&& self, int i) -> bool {
    if (i == n) return true;
    for (int j = 0; j < n; ++j) {
      if (used[j] || a.nodes[i].category != b.nodes[j].category || da[i] != db[j]) continue;
      bool ok = true;
      for (int k = 0; k < i && ok; ++k) ok = adj_a[i][k] == adj_b[j][map[k]];
      if (!ok) continue;
      map[i] = j;
      used[j] = 1;
      if (self(self, i + 1)) return true;
      used[j] = 0;
    }
    return false;
  };
  return extend(extend, 0);
}

// One node per 4-connected room component; two components are connected when
// they come within Chebyshev distance 2, i.e. at most one wall pixel apart.
// Nodes are numbered in row-major order of each component's first pixel.
inline LayoutGraph graph_from_plan(const LabelGrid& labels, const ClassPalette& palette) {
  const int h = labels.height, w = labels.width;
  Grid<int> comp(h, w, -1);
  LayoutGraph g;
  std::vector<double> sum_r, sum_c;
  std::vector<int> count;
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int cls = labels.at(r, c);
      if (comp.at(r, c) >= 0 || !palette.is_room(cls)) continue;
      const int id = g.size();
      g.nodes.push_back({id, cls, std::nullopt});
      sum_r.push_back(0.0);
      sum_c.push_back(0.0);
      count.push_back(0);
      comp.at(r, c) = id;
      stack.emplace_back(r, c);
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        sum_r[id] += y;
        sum_c[id] += x;
        ++count[id];
        constexpr std::array<std::pair<int, int>, 4> kSteps{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
        for (auto [dy, dx] : kSteps) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (comp.at(yy, xx) >= 0 || labels.at(yy, xx) != cls) continue;
          comp.at(yy, xx) = id;
          stack.emplace_back(yy, xx);
        }
      }
    }
  for (int i = 0; i < g.size(); ++i)
    g.nodes[i].centroid = Point{(sum_c[i] / count[i] + 0.5) / w, (sum_r[i] / count[i] + 0.5) / h};

  std::set<std::pair<int, int>> edges;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int a = comp.at(r, c);
      if (a < 0) continue;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          const int yy = r + dy, xx = c + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const int b = comp.at(yy, xx);
          if (b >= 0 && b != a) edges.insert(std::minmax(a, b));
        }
    }
  g.edges.assign(edges.begin(), edges.end());
  return g;
}

inline nlohmann::json graph_to_json_value(const LayoutGraph& g, const ClassPalette& palette) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    nlohmann::json j{{"id", n.id}};
    if (palette.contains(n.category)) j["category"] = palette.entry(n.category).name;
    else j["category"] = n.category;
    if (n.centroid) j["centroid"] = {n.centroid->x, n.centroid->y};
    nodes.push_back(std::move(j));
  }
  nlohmann::json edges = nlohmann::json::array();
  for (auto [a, b] : g.edges) edges.push_back({a, b});
  return {{"nodes", nodes}, {"edges", edges}};
}

inline std::string graph_to_json(const LayoutGraph& g, const ClassPalette& palette) {
  return graph_to_json_value(g, palette).dump(2);
}

struct ParsedGraph {
  LayoutGraph graph;
  std::vector<std::string> warnings;
};

// Categories resolve by palette name or by integer id. Duplicate edges are
// dropped with a warning unless `keep_duplicates` is set (then validate_graph
// reports them); the other invariants are left to validate_graph.
inline ParsedGraph graph_from_json_value(const nlohmann::json& j, const ClassPalette& palette,
                                         bool keep_duplicates = false) {
  auto fail = [](const std::string& field, const std::string& why) -> ParseError {
    return ParseError("graph field '" + field + "': " + why);
  };
  if (!j.is_object()) throw fail("<root>", "expected an object");
  if (!j.contains("nodes")) throw fail("nodes", "missing");
  if (!j["nodes"].is_array()) throw fail("nodes", "expected an array");
  ParsedGraph out;
  const auto& nodes = j["nodes"];
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string where = "nodes[" + std::to_string(i) + "]";
    const auto& n = nodes[i];
    if (!n.is_object()) throw fail(where, "expected an object");
    LayoutGraph::Node node;
    if (!n.contains("id") || !n["id"].is_number_integer()) throw fail(where + ".id", "expected an integer");
    node.id = n["id"].get<int>();
    if (!n.contains("category")) throw fail(where + ".category", "missing");
    const auto& cat = n["category"];
    if (cat.is_string()) {
      auto id = palette.find_by_name(cat.get<std::string>());
      if (!id) throw fail(where + ".category", "unknown category '" + cat.get<std::string>() + "'");
      node.category = *id;
    } else if (cat.is_number_integer()) {
      node.category = cat.get<int>();
    } else {
      throw fail(where + ".category", "expected a name or an integer id");
    }
    if (n.contains("centroid") && !n["centroid"].is_null()) {
      const auto& c = n["centroid"];
      if (!c.is_array() || c.size() != 2 || !c[0].is_number() || !c[1].is_number())
        throw fail(where + ".centroid", "expected [x, y]");
      node.centroid = Point{c[0].get<double>(), c[1].get<double>()};
    }
    for (const auto& [key, _] : n.items())
      if (key != "id" && key != "category" && key != "centroid")
        out.warnings.push_back(where + ": ignored unknown key '" + key + "'");
    out.graph.nodes.push_back(node);
  }
  // Node lists given out of order are sorted when the ids are a permutation.
  {
    std::vector<int> ids;
    for (const auto& n : out.graph.nodes) ids.push_back(n.id);
    std::sort(ids.begin(), ids.end());
    bool perm = true;
    for (std::size_t i = 0; i < ids.size(); ++i) perm = perm && ids[i] == static_cast<int>(i);
    if (perm)
      std::sort(out.graph.nodes.begin(), out.graph.nodes.end(),
                [](const auto& a, const auto& b) { return a.id < b.id; });
  }
  if (j.contains("edges")) {
    const auto& edges = j["edges"];
    if (!edges.is_array()) throw fail("edges", "expected an array");
    std::set<std::pair<int, int>> seen;
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const std::string where = "edges[" + std::to_string(i) + "]";
      const auto& e = edges[i];
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
        throw fail(where, "expected [a, b] with integer node ids");
      const int a = e[0].get<int>(), b = e[1].get<int>();
      if (a != b && !seen.insert(std::minmax(a, b)).second && !keep_duplicates) {
        out.warnings.push_back(where + ": duplicate edge (" + std::to_string(a) + "," +
                               std::to_string(b) + ") dropped");
        continue;
      }
      out.graph.edges.emplace_back(a, b);
    }
  }
  return out;
}

inline ParsedGraph graph_from_json(const std::string& text, const ClassPalette& palette) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // Report a line number alongside nlohmann's byte offset.
    const auto upto = text.substr(0, std::min<std::size_t>(e.byte, text.size()));
    const auto line = 1 + std::count(upto.begin(), upto.end(), '\n');
    throw ParseError("graph JSON line " + std::to_string(line) + ": " + e.what());
  }
  return graph_from_json_value(j, palette);
}

}  // namespace floorplan
