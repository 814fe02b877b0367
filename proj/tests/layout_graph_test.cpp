#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "floorplan/layout_graph.hpp"
#include "support/fixtures.hpp"

namespace floorplan {
namespace {

using testing::path_graph;

const ClassPalette& palette() {
  static const ClassPalette p = ClassPalette::default_palette();
  return p;
}

bool has_rule(const std::vector<Violation>& v, const char* rule) {
  for (const auto& x : v)
    if (x.rule == rule) return true;
  return false;
}

TEST(ValidateGraph, EmptyGraph) {
  const auto v = validate_graph({}, palette());
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "graph must have ≥1 node");
}

TEST(ValidateGraph, SelfLoop) {
  auto g = path_graph({2, 3, 4});
  g.edges.emplace_back(2, 2);
  const auto v = validate_graph(g, palette());
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "self-loop");
  EXPECT_EQ(v[0].message(), "edge (2,2): self-loop");
}

TEST(ValidateGraph, NonRoomCategory) {
  auto g = path_graph({2, palette().background_id()});
  EXPECT_TRUE(has_rule(validate_graph(g, palette()), rules::kNonRoom));
  g.nodes[1].category = palette().structure_id();
  EXPECT_TRUE(has_rule(validate_graph(g, palette()), rules::kNonRoom));
  g.nodes[1].category = 99;
  EXPECT_TRUE(has_rule(validate_graph(g, palette()), rules::kUnknownCategory));
}

TEST(ValidateGraph, OtherRules) {
  auto g = path_graph({2, 3});
  g.edges.emplace_back(1, 0);
  EXPECT_TRUE(has_rule(validate_graph(g, palette()), rules::kDuplicateEdge));
  g = path_graph({2, 3});
  g.edges.emplace_back(0, 5);
  EXPECT_TRUE(has_rule(validate_graph(g, palette()), rules::kDanglingEdge));
  g = path_graph({2, 3});
  g.nodes[1].id = 4;
  EXPECT_TRUE(has_rule(validate_graph(g, palette()), rules::kNodeId));
  EXPECT_TRUE(validate_graph(path_graph({2, 3, 7}), palette()).empty());
}

TEST(EncodeNodeFeatures, SingleNode) {
  // Five room classes; the third is category id 4.
  const ClassPalette p({{0, "bg", {0, 0, 0}},
                        {1, "wall", {1, 1, 1}},
                        {2, "a", {2, 2, 2}},
                        {3, "b", {3, 3, 3}},
                        {4, "c", {4, 4, 4}},
                        {5, "d", {5, 5, 5}},
                        {6, "e", {6, 6, 6}}},
                       0, 1);
  const auto x = encode_node_features(path_graph({4}), p);
  Eigen::RowVectorXd expected(6);
  expected << 0, 0, 1, 0, 0, 0.0;
  EXPECT_EQ(x.row(0), expected);
}

TEST(EncodeNodeFeatures, TwoConnectedNodes) {
  const auto x = encode_node_features(path_graph({2, 3}), palette());
  EXPECT_EQ(x(0, 6), 0.5);
  EXPECT_EQ(x(1, 6), 0.5);
  for (int i = 0; i < 2; ++i) EXPECT_EQ(x.row(i).head(6).sum(), 1.0);
}

TEST(EncodeNodeFeatures, InvalidGraphThrows) {
  EXPECT_THROW(encode_node_features(LayoutGraph{}, palette()), InvalidGraph);
}

TEST(NormalizedAdjacency, Examples) {
  EXPECT_EQ(normalized_adjacency(path_graph({2})), Eigen::MatrixXd::Constant(1, 1, 1.0));
  const auto two = normalized_adjacency(path_graph({2, 3}));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(two(i, j), 0.5, 1e-15);
  const auto path = normalized_adjacency(path_graph({2, 3, 4}));
  EXPECT_NEAR(path(0, 1), 0.40825, 1e-5);
  EXPECT_NEAR(path(0, 1), 1.0 / std::sqrt(6.0), 1e-15);
  EXPECT_EQ(path(0, 2), 0.0);
}

TEST(NormalizedAdjacency, SymmetricWithInverseDegreeDiagonal) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = testing::random_graph(rng, palette(), 1, 12);
    const auto a = normalized_adjacency(g);
    const auto deg = node_degrees(g);
    EXPECT_LE((a - a.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(a.minCoeff(), 0.0);
    for (int i = 0; i < g.size(); ++i) EXPECT_NEAR(a(i, i), 1.0 / (deg[i] + 1), 1e-12);
  }
}

TEST(Permutation, FeaturesAndAdjacencyCommute) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = testing::random_graph(rng, palette(), 1, 10);
    const auto perm = testing::random_permutation(rng, g.size());
    const auto pg = permute_graph(g, perm);
    const auto x = encode_node_features(g, palette());
    const auto px = encode_node_features(pg, palette());
    const auto a = normalized_adjacency(g);
    const auto pa = normalized_adjacency(pg);
    for (int i = 0; i < g.size(); ++i) {
      ASSERT_EQ(px.row(perm[i]), x.row(i));
      for (int j = 0; j < g.size(); ++j) ASSERT_EQ(pa(perm[i], perm[j]), a(i, j));
    }
    ASSERT_TRUE(isomorphic(g, pg));
  }
}

TEST(Isomorphic, CategoryPreserving) {
  EXPECT_TRUE(isomorphic(path_graph({2, 3, 4}), path_graph({4, 3, 2})));
  EXPECT_FALSE(isomorphic(path_graph({2, 3, 4}), path_graph({3, 2, 4})));
  auto tri = path_graph({2, 2, 2});
  tri.edges.emplace_back(0, 2);
  EXPECT_FALSE(isomorphic(tri, path_graph({2, 2, 2})));
}

// Components by union-find and adjacency by comparing every pair of pixels.
LayoutGraph plan_graph_oracle(const LabelGrid& labels) {
  const int n = static_cast<int>(labels.size());
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  const int w = labels.width;
  for (int i = 0; i < n; ++i) {
    if (!palette().is_room(labels.values[i])) continue;
    if (i % w + 1 < w && labels.values[i + 1] == labels.values[i]) parent[find(i)] = find(i + 1);
    if (i + w < n && labels.values[i + w] == labels.values[i]) parent[find(i)] = find(i + w);
  }
  std::map<int, int> root_to_node;  // ascending first-pixel order by scanning
  LayoutGraph g;
  std::vector<int> node_of(n, -1);
  for (int i = 0; i < n; ++i) {
    if (!palette().is_room(labels.values[i])) continue;
    const int root = find(i);
    if (!root_to_node.count(root)) {
      root_to_node[root] = g.size();
      g.nodes.push_back({g.size(), labels.values[i], std::nullopt});
    }
    node_of[i] = root_to_node[root];
  }
  std::set<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (node_of[i] < 0 || node_of[j] < 0 || node_of[i] == node_of[j]) continue;
      if (std::abs(i / w - j / w) <= 2 && std::abs(i % w - j % w) <= 2)
        edges.insert(std::minmax(node_of[i], node_of[j]));
    }
  g.edges.assign(edges.begin(), edges.end());
  return g;
}

TEST(GraphFromPlan, SingleRoom) {
  const auto g = graph_from_plan(LabelGrid(6, 6, 3), palette());
  ASSERT_EQ(g.size(), 1);
  EXPECT_TRUE(g.edges.empty());
  EXPECT_DOUBLE_EQ(g.nodes[0].centroid->x, 0.5);
  EXPECT_DOUBLE_EQ(g.nodes[0].centroid->y, 0.5);
}

TEST(GraphFromPlan, OneWallColumnApart) {
  LabelGrid labels(6, 6, 2);
  for (int r = 0; r < 6; ++r) {
    labels.at(r, 3) = 1;
    labels.at(r, 4) = labels.at(r, 5) = 5;
  }
  const auto g = graph_from_plan(labels, palette());
  ASSERT_EQ(g.size(), 2);
  EXPECT_EQ(g.edge_set(), (std::vector<std::pair<int, int>>{{0, 1}}));
}

TEST(GraphFromPlan, TwoWallColumnsApart) {
  LabelGrid labels(6, 6, 2);
  for (int r = 0; r < 6; ++r) {
    labels.at(r, 2) = labels.at(r, 3) = 1;
    labels.at(r, 4) = labels.at(r, 5) = 5;
  }
  const auto g = graph_from_plan(labels, palette());
  EXPECT_EQ(g.size(), 2);
  EXPECT_TRUE(g.edges.empty());
}

TEST(GraphFromPlan, NoRoomsGivesEmptyGraph) {
  EXPECT_EQ(graph_from_plan(LabelGrid(4, 4, 1), palette()).size(), 0);
}

TEST(GraphFromPlan, MatchesBruteForceOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    LabelGrid labels(5 + trial % 6, 4 + trial % 7);
    // Few classes so that components span several pixels.
    const int classes[] = {0, 1, 1, 2, 3, 3};
    for (auto& v : labels.values) v = classes[rng() % 6];
    auto g = graph_from_plan(labels, palette());
    for (auto& node : g.nodes) node.centroid.reset();
    ASSERT_EQ(g, plan_graph_oracle(labels)) << "trial " << trial;
  }
}

TEST(GraphJson, RoundTrip) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = testing::random_graph(rng, palette(), 1, 9);
    for (auto& n : g.nodes)
      if (rng() % 2) n.centroid = Point{(rng() % 1000) / 999.0, (rng() % 1000) / 777.0};
    const auto parsed = graph_from_json(graph_to_json(g, palette()), palette());
    EXPECT_TRUE(parsed.warnings.empty());
    EXPECT_EQ(parsed.graph, g);
  }
}

TEST(GraphJson, SchemaExample) {
  const auto parsed = graph_from_json(
      R"({"nodes":[{"id":0,"category":"bedroom","centroid":[0.3,0.7]},{"id":1,"category":3}],"edges":[[0,1]]})",
      palette());
  ASSERT_EQ(parsed.graph.size(), 2);
  EXPECT_EQ(parsed.graph.nodes[0].category, 2);
  EXPECT_EQ(parsed.graph.nodes[1].category, 3);
  EXPECT_DOUBLE_EQ(parsed.graph.nodes[0].centroid->y, 0.7);
  EXPECT_FALSE(parsed.graph.nodes[1].centroid.has_value());
}

TEST(GraphJson, MissingNodesIsParseError) {
  EXPECT_THROW(graph_from_json(R"({"edges":[]})", palette()), ParseError);
}

TEST(GraphJson, DiagnosticsNameTheField) {
  try {
    graph_from_json(R"({"nodes":[{"id":0,"category":"attic"}]})", palette());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("nodes[0].category"), std::string::npos) << e.what();
  }
  try {
    graph_from_json("{\n\"nodes\": [\n  {\"id\": 0,,}\n]}", palette());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(GraphJson, DuplicateEdgeDeduplicatedWithWarning) {
  const auto parsed = graph_from_json(
      R"({"nodes":[{"id":0,"category":"bedroom"},{"id":1,"category":"kitchen"}],
          "edges":[[0,1],[1,0]]})",
      palette());
  EXPECT_EQ(parsed.graph.edges.size(), 1u);
  ASSERT_EQ(parsed.warnings.size(), 1u);
  EXPECT_NE(parsed.warnings[0].find("duplicate"), std::string::npos);
  EXPECT_TRUE(validate_graph(parsed.graph, palette()).empty());
}

}  // namespace
}  // namespace floorplan
