#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "floorplan/geometry.hpp"
#include "floorplan/layout_graph.hpp"
#include "floorplan/model.hpp"
#include "floorplan/palette.hpp"

namespace floorplan::testing {

// Closed one-pixel square ring with corners (lo, lo) and (hi, hi).
inline RawBoundary ring(int size, int lo, int hi) {
  RawBoundary raw(size, size, 0.0f);
  for (int i = lo; i <= hi; ++i) {
    raw.at(lo, i) = raw.at(hi, i) = 1.0f;
    raw.at(i, lo) = raw.at(i, hi) = 1.0f;
  }
  return raw;
}

inline LayoutGraph path_graph(const std::vector<int>& categories) {
  LayoutGraph g;
  for (int i = 0; i < static_cast<int>(categories.size()); ++i)
    g.nodes.push_back({i, categories[i], std::nullopt});
  for (int i = 0; i + 1 < static_cast<int>(categories.size()); ++i) g.edges.emplace_back(i, i + 1);
  return g;
}

// Random connected graph over the palette's room classes.
inline LayoutGraph random_graph(std::mt19937_64& rng, const ClassPalette& palette, int min_n,
                                int max_n) {
  const auto rooms = palette.room_ids();
  const int n = std::uniform_int_distribution<int>(min_n, max_n)(rng);
  LayoutGraph g;
  for (int i = 0; i < n; ++i)
    g.nodes.push_back(
        {i, rooms[std::uniform_int_distribution<int>(0, static_cast<int>(rooms.size()) - 1)(rng)],
         std::nullopt});
  for (int i = 1; i < n; ++i)
    g.edges.emplace_back(std::uniform_int_distribution<int>(0, i - 1)(rng), i);
  for (int extra = 0; extra < n / 2; ++extra) {
    const int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
    const int b = std::uniform_int_distribution<int>(0, n - 1)(rng);
    bool dup = a == b;
    for (auto [u, v] : g.edges) dup = dup || (u == a && v == b) || (u == b && v == a);
    if (!dup) g.edges.emplace_back(a, b);
  }
  return g;
}

inline std::vector<int> random_permutation(std::mt19937_64& rng, int n) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

inline ModelConfig tiny_config(int classes = 8) {
  ModelConfig c;
  c.stages = 1;
  c.base_width = 2;
  c.gcn_layers = 3;
  c.gcn_hidden = 4;
  c.graph_channels = 2;
  c.classes = classes;
  return c;
}

inline ModelConfig small_config(int classes = 8) {
  ModelConfig c;
  c.stages = 2;
  c.base_width = 4;
  c.gcn_hidden = 8;
  c.graph_channels = 4;
  c.classes = classes;
  return c;
}

// Unique scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("floorplan-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace floorplan::testing
