#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "floorplan/dataset.hpp"
#include "support/fixtures.hpp"
#include "support/synth_oracle.hpp"

namespace floorplan {
namespace {

using testing::TempDir;

const ClassPalette& palette() {
  static const ClassPalette p = ClassPalette::default_palette();
  return p;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

TEST(GenerateSynthetic, SameSeedIsBitIdentical) {
  const SynthConfig cfg;
  EXPECT_EQ(generate_synthetic(42, cfg, palette()), generate_synthetic(42, cfg, palette()));
  EXPECT_FALSE(generate_synthetic(42, cfg, palette()) == generate_synthetic(43, cfg, palette()));
}

TEST(GenerateSynthetic, SingleRoom) {
  SynthConfig cfg;
  cfg.min_rooms = cfg.max_rooms = 1;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = generate_synthetic(seed, cfg, palette());
    EXPECT_EQ(s.graph.size(), 1);
    EXPECT_TRUE(s.graph.edges.empty());
    EXPECT_EQ(graph_from_plan(*s.target, palette()).size(), 1);
  }
}

TEST(GenerateSynthetic, StructuralInvariants) {
  for (const SynthConfig cfg : {SynthConfig{}, SynthConfig{64, 3, 8, 2, 3}, SynthConfig{32, 2, 4, 1, 2}}) {
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
      const auto layout = generate_synthetic_layout(seed, cfg, palette());
      const auto& s = layout.sample;
      ASSERT_TRUE(s.target);
      const int k = static_cast<int>(layout.rooms.size());
      ASSERT_GE(k, cfg.min_rooms);
      ASSERT_LE(k, cfg.max_rooms);
      ASSERT_EQ(check_boundary_invariants(s.boundary), "");
      ASSERT_TRUE(validate_graph(s.graph, palette()).empty());
      ASSERT_TRUE(testing::connected(s.graph)) << "seed " << seed;
      // One doorway per cut, inside its wall strip.
      ASSERT_EQ(layout.doorways.size(), layout.cut_walls.size());
      for (std::size_t i = 0; i < layout.doorways.size(); ++i) {
        const auto& d = layout.doorways[i];
        const auto& w = layout.cut_walls[i];
        ASSERT_TRUE(d.r0 >= w.r0 && d.r1 <= w.r1 && d.c0 >= w.c0 && d.c1 <= w.c1);
      }
      // Outer wall occupies 60-90% of each side.
      ASSERT_GE(layout.outer.height(), 0.6 * cfg.grid - 1);
      ASSERT_LE(layout.outer.height(), 0.9 * cfg.grid + 1);
      // Raw channel is exactly the structure pixels; interior is inside.
      const int st = palette().structure_id();
      for (std::size_t i = 0; i < s.target->size(); ++i) {
        ASSERT_EQ(s.boundary.channel(BoundaryImage::kRaw)[i],
                  s.target->values[i] == st ? 1.0f : 0.0f);
        if (palette().is_room(s.target->values[i]))
          ASSERT_EQ(s.boundary.channel(BoundaryImage::kInWallOut)[i], 1.0f);
        if (s.target->values[i] == palette().background_id())
          ASSERT_EQ(s.boundary.channel(BoundaryImage::kInWallOut)[i], 0.0f);
      }
    }
  }
}

TEST(GenerateSynthetic, EveryRoomIsFourConnected) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto layout = generate_synthetic_layout(seed, SynthConfig{}, palette());
    // graph_from_plan assigns one node per component; each room rectangle
    // must lie in exactly one node's component.
    const auto& t = *layout.sample.target;
    for (std::size_t i = 0; i < layout.rooms.size(); ++i) {
      const auto& r = layout.rooms[i];
      for (int y = r.r0; y < r.r1; ++y)
        for (int x = r.c0; x < r.c1; ++x) ASSERT_EQ(t.at(y, x), layout.categories[i]);
    }
  }
}

TEST(GenerateSynthetic, GraphMatchesRectangleOracle) {
  for (const SynthConfig cfg : {SynthConfig{}, SynthConfig{64, 4, 10, 2, 3}}) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto layout = generate_synthetic_layout(seed, cfg, palette());
      ASSERT_TRUE(isomorphic(layout.sample.graph, testing::layout_graph_oracle(layout)))
          << "seed " << seed;
      ASSERT_TRUE(isomorphic(graph_from_plan(*layout.sample.target, palette()),
                             layout.sample.graph));
    }
  }
}

TEST(GenerateSynthetic, ConfigErrors) {
  const SynthConfig base;
  auto bad = base;
  bad.grid = 60;
  EXPECT_THROW(generate_synthetic(1, bad, palette()), ConfigError);
  bad = base;
  bad.min_rooms = 0;
  EXPECT_THROW(generate_synthetic(1, bad, palette()), ConfigError);
  bad = base;
  bad.min_rooms = 5;
  bad.max_rooms = 4;
  EXPECT_THROW(generate_synthetic(1, bad, palette()), ConfigError);
  bad = base;
  bad.max_rooms = 3 * palette().num_room_classes() + 1;
  EXPECT_THROW(generate_synthetic(1, bad, palette()), ConfigError);
  bad = base;
  bad.grid = 16;
  bad.stages = 2;
  bad.min_rooms = bad.max_rooms = 18;  // cannot fit
  EXPECT_THROW(generate_synthetic(1, bad, palette()), ConfigError);
}

TEST(Manifest, WriteAndReadBack) {
  TempDir dir("manifest");
  std::vector<ManifestRecord> records;
  for (std::uint64_t seed = 0; seed < 3; ++seed)
    records.push_back(write_sample(dir.path(), generate_synthetic(seed, {}, palette()), palette()));
  write_manifest(dir.path() / "manifest.jsonl", records);
  const auto m = read_manifest(dir.path() / "manifest.jsonl");
  EXPECT_EQ(m.records, records);
  EXPECT_EQ(m.base_dir, dir.path());
}

TEST(Manifest, DuplicateIdsRejected) {
  TempDir dir("manifest-dup");
  write_text(dir.path() / "m.jsonl",
             R"({"id":"a","struct_path":"s.png","graph_path":"g.json"})"
             "\n"
             R"({"id":"a","struct_path":"s2.png","graph_path":"g2.json"})"
             "\n");
  EXPECT_THROW(read_manifest(dir.path() / "m.jsonl"), ParseError);
}

TEST(Manifest, MissingFieldReportsLine) {
  TempDir dir("manifest-bad");
  write_text(dir.path() / "m.jsonl", "\n{\"id\":\"a\"}\n");
  try {
    read_manifest(dir.path() / "m.jsonl");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("m.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(LoadMsdSample, RoundTripIsBitExact) {
  TempDir dir("roundtrip");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_synthetic(seed, {}, palette());
    const auto record = write_sample(dir.path(), s, palette());
    DatasetManifest m{{record}, dir.path()};
    EXPECT_EQ(load_msd_sample(m, record, palette()), s) << "seed " << seed;
  }
}

TEST(LoadMsdSample, UnknownColorNamesFile) {
  TempDir dir("badcolor");
  auto s = generate_synthetic(3, {}, palette());
  auto record = write_sample(dir.path(), s, palette());
  RgbImage img = render_plan(*s.target, palette());
  img.pixels[0] = 1;
  img.pixels[1] = 2;
  img.pixels[2] = 3;
  write_file_atomic(dir.path() / *record.full_path, encode_rgb_png(img));
  DatasetManifest m{{record}, dir.path()};
  try {
    load_msd_sample(m, record, palette());
    FAIL();
  } catch (const UnknownClassId& e) {
    EXPECT_NE(std::string(e.what()).find("full/synth-3.png"), std::string::npos) << e.what();
  }
}

TEST(LoadMsdSample, OpenBoundaryNamesSample) {
  TempDir dir("open");
  auto s = generate_synthetic(4, {}, palette());
  auto record = write_sample(dir.path(), s, palette());
  RawBoundary raw(64, 64, 0.0f);
  for (int i = 10; i < 50; ++i) raw.at(10, i) = 1.0f;  // a lone wall segment
  write_file_atomic(dir.path() / record.struct_path, encode_raw_png(raw));
  DatasetManifest m{{record}, dir.path()};
  try {
    load_msd_sample(m, record, palette());
    FAIL();
  } catch (const NoInteriorError& e) {
    EXPECT_NE(std::string(e.what()).find("synth-4"), std::string::npos) << e.what();
  }
}

TEST(LoadMsdSample, BadGraphIsParseError) {
  TempDir dir("badgraph");
  auto record = write_sample(dir.path(), generate_synthetic(5, {}, palette()), palette());
  write_text(dir.path() / record.graph_path, R"({"edges": []})");
  DatasetManifest m{{record}, dir.path()};
  EXPECT_THROW(load_msd_sample(m, record, palette()), ParseError);
}

TEST(LoadMsdSample, IndexedFullImage) {
  TempDir dir("indexed");
  const auto s = generate_synthetic(6, {}, palette());
  auto record = write_sample(dir.path(), s, palette());
  write_file_atomic(dir.path() / *record.full_path, encode_label_png(*s.target));
  DatasetManifest m{{record}, dir.path()};
  EXPECT_EQ(load_msd_sample(m, record, palette()).target, s.target);
}

DatasetManifest numbered_manifest(int n) {
  DatasetManifest m;
  for (int i = 0; i < n; ++i)
    m.records.push_back({"s" + std::to_string(i), "a.png", "a.json", std::nullopt});
  return m;
}

std::set<std::string> ids(const DatasetManifest& m) {
  std::set<std::string> out;
  for (const auto& r : m.records) out.insert(r.id);
  return out;
}

TEST(SplitDataset, EightTwo) {
  const auto m = numbered_manifest(10);
  const auto [train, val] = split_dataset(m, 0.8, 0.2, 7);
  EXPECT_EQ(train.records.size(), 8u);
  EXPECT_EQ(val.records.size(), 2u);
  const auto [train2, val2] = split_dataset(m, 0.8, 0.2, 7);
  EXPECT_EQ(train.records, train2.records);
  EXPECT_EQ(val.records, val2.records);
}

TEST(SplitDataset, IsAPartitionForRandomInputs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = static_cast<int>(rng() % 40);
    const double ratio = 0.05 + 0.9 * static_cast<double>(rng() % 1000) / 1000.0;
    const auto m = numbered_manifest(n);
    const auto [train, val] = split_dataset(m, ratio, 1.0 - ratio, rng());
    auto a = ids(train), b = ids(val);
    ASSERT_EQ(a.size() + b.size(), static_cast<std::size_t>(n));
    for (const auto& id : b) ASSERT_FALSE(a.count(id));
    a.insert(b.begin(), b.end());
    ASSERT_EQ(a, ids(m));
  }
}

TEST(SplitDataset, RejectsBadRatios) {
  const auto m = numbered_manifest(4);
  EXPECT_THROW(split_dataset(m, 0.5, 0.4, 1), ConfigError);
  EXPECT_THROW(split_dataset(m, 1.0, 0.0, 1), ConfigError);
}

TEST(PackBatch, NativeSizeIsIdentity) {
  const auto s = generate_synthetic(1, {}, palette());
  const auto b = pack_batch<float>({&s}, 64, 64, palette(), 8);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b.boundaries[0], s.boundary);
  EXPECT_EQ(b.targets[0], *s.target);
  EXPECT_TRUE(b.has_target[0]);
  const auto gi = make_graph_input<float>(s.graph, palette());
  EXPECT_EQ(b.graphs[0].features, gi.features);
  EXPECT_EQ(b.graphs[0].adjacency, gi.adjacency);
}

TEST(PackBatch, MixedSizesAndLabelSubset) {
  const auto a = generate_synthetic(1, {}, palette());
  const auto c = generate_synthetic(2, SynthConfig{32, 2, 4, 1, 3}, palette());
  const auto b = pack_batch<float>({&a, &c}, 48, 48, palette(), 8);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(b.boundaries[i].height, 48);
    EXPECT_EQ(b.targets[i].width, 48);
    EXPECT_EQ(check_boundary_invariants(b.boundaries[i]), "");
    const auto& src = i == 0 ? *a.target : *c.target;
    const std::set<int> before(src.values.begin(), src.values.end());
    for (int v : b.targets[i].values) EXPECT_TRUE(before.count(v));
  }
}

TEST(PackBatch, RejectsIndivisibleSize) {
  const auto a = generate_synthetic(1, {}, palette());
  EXPECT_THROW(pack_batch<float>({&a}, 60, 64, palette(), 8), DimensionError);
}

}  // namespace
}  // namespace floorplan
