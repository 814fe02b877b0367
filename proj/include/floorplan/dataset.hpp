#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "floorplan/errors.hpp"
#include "floorplan/geometry.hpp"
#include "floorplan/image_io.hpp"
#include "floorplan/layout_graph.hpp"
#include "floorplan/model.hpp"
#include "floorplan/palette.hpp"

namespace floorplan {

// One struct / graph / full triple.
struct Sample {
  std::string id;
  BoundaryImage boundary;
  LayoutGraph graph;
  std::optional<LabelGrid> target;

  bool operator==(const Sample&) const = default;
};

struct ManifestRecord {
  std::string id;
  std::filesystem::path struct_path;
  std::filesystem::path graph_path;
  std::optional<std::filesystem::path> full_path;

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::string split = "all";

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() ? p : base_dir / p;
  }
};

inline nlohmann::json to_json(const ManifestRecord& r) {
  nlohmann::json j{{"id", r.id},
                   {"struct_path", r.struct_path.generic_string()},
                   {"graph_path", r.graph_path.generic_string()}};
  if (r.full_path) j["full_path"] = r.full_path->generic_string();
  return j;
}

// JSON-lines manifest; blank lines are skipped.
inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError(where + ": expected an object");
    for (const char* key : {"id", "struct_path", "graph_path"})
      if (!j.contains(key) || !j[key].is_string())
        throw ParseError(where + ": missing string field '" + key + "'");
    ManifestRecord r{j["id"].get<std::string>(), j["struct_path"].get<std::string>(),
                     j["graph_path"].get<std::string>(), std::nullopt};
    if (j.contains("full_path") && !j["full_path"].is_null())
      r.full_path = j["full_path"].get<std::string>();
    if (!ids.insert(r.id).second) throw ParseError(where + ": duplicate sample id '" + r.id + "'");
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestRecord>& records) {
  std::string text;
  for (const auto& r : records) text += to_json(r).dump() + "\n";
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

struct LoadOptions {
  StructLoadOptions struct_image;
  ExteriorExtractor exterior;  // empty = flood fill
};

inline Sample load_msd_sample(const DatasetManifest& manifest, const ManifestRecord& record,
                              const ClassPalette& palette, const LoadOptions& opt = {}) {
  const auto tag = [&](const std::filesystem::path& p) {
    return "sample '" + record.id + "' (" + p.string() + "): ";
  };
  Sample s;
  s.id = record.id;

  const auto struct_path = manifest.resolve(record.struct_path);
  try {
    const RawBoundary raw = raw_from_image(read_png(struct_path), opt.struct_image);
    s.boundary = build_boundary_channels(
        raw, extract_exterior_mask(raw, InteriorPolicy::kRequire, opt.exterior));
  } catch (const NoInteriorError& e) {
    throw NoInteriorError(tag(struct_path) + e.what());
  } catch (const AllWallError& e) {
    throw AllWallError(tag(struct_path) + e.what());
  } catch (const ParseError& e) {
    throw ParseError(tag(struct_path) + e.what());
  } catch (const IoError& e) {
    throw IoError(tag(struct_path) + e.what());
  }

  const auto graph_path = manifest.resolve(record.graph_path);
  try {
    const auto bytes = read_file_bytes(graph_path);
    s.graph = graph_from_json(std::string(bytes.begin(), bytes.end()), palette).graph;
    require_valid(s.graph, palette);
  } catch (const ParseError& e) {
    throw ParseError(tag(graph_path) + e.what());
  } catch (const InvalidGraph& e) {
    throw InvalidGraph(tag(graph_path) + e.what());
  } catch (const IoError& e) {
    throw IoError(tag(graph_path) + e.what());
  }

  if (record.full_path) {
    const auto full_path = manifest.resolve(*record.full_path);
    try {
      s.target = labels_from_image(read_png(full_path), palette);
    } catch (const UnknownClassId& e) {
      throw UnknownClassId(tag(full_path) + e.what());
    } catch (const ParseError& e) {
      throw ParseError(tag(full_path) + e.what());
    } catch (const IoError& e) {
      throw IoError(tag(full_path) + e.what());
    }
    if (!s.target->same_dims(s.boundary.height, s.boundary.width))
      throw DimensionMismatch(tag(full_path) + "full image size differs from struct image");
  }
  return s;
}

inline std::vector<Sample> load_samples(const DatasetManifest& manifest,
                                        const ClassPalette& palette,
                                        const LoadOptions& opt = {}) {
  std::vector<Sample> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) out.push_back(load_msd_sample(manifest, r, palette, opt));
  return out;
}

// Writes struct/graph/full files for a sample under `dir` and returns the
// manifest record (paths relative to `dir`).
inline ManifestRecord write_sample(const std::filesystem::path& dir, const Sample& s,
                                   const ClassPalette& palette) {
  std::filesystem::create_directories(dir / "struct");
  std::filesystem::create_directories(dir / "graph");
  ManifestRecord r{s.id, "struct/" + s.id + ".png", "graph/" + s.id + ".json", std::nullopt};
  RawBoundary raw(s.boundary.height, s.boundary.width);
  const auto ch = s.boundary.channel(BoundaryImage::kRaw);
  std::copy(ch.begin(), ch.end(), raw.values.begin());
  write_file_atomic(dir / r.struct_path, encode_raw_png(raw));
  const auto text = graph_to_json(s.graph, palette);
  write_file_atomic(dir / r.graph_path, std::vector<std::uint8_t>(text.begin(), text.end()));
  if (s.target) {
    std::filesystem::create_directories(dir / "full");
    r.full_path = "full/" + s.id + ".png";
    write_file_atomic(dir / *r.full_path, encode_rgb_png(render_plan(*s.target, palette)));
  }
  return r;
}

struct SynthConfig {
  int grid = 64;
  int min_rooms = 2;
  int max_rooms = 6;
  int wall_px = 1;
  int stages = 3;  // grid must be divisible by 2^stages

  bool operator==(const SynthConfig&) const = default;
};

struct PixelRect {
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;  // half-open
  int height() const { return r1 - r0; }
  int width() const { return c1 - c0; }
  bool operator==(const PixelRect&) const = default;
};

struct SyntheticLayout {
  Sample sample;
  PixelRect outer;                  // outer wall's bounding box
  std::vector<PixelRect> rooms;     // leaf rectangles
  std::vector<int> categories;      // per room
  std::vector<PixelRect> cut_walls; // wall strip of each split
  std::vector<PixelRect> doorways;  // one per cut, inside its wall strip
};

namespace detail {

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace detail

// Rectilinear recursive-split floor plan. Deterministic in `seed`.
inline SyntheticLayout generate_synthetic_layout(std::uint64_t seed, const SynthConfig& cfg,
                                                 const ClassPalette& palette) {
  const int multiple = 1 << std::max(0, cfg.stages);
  if (cfg.grid < 16 || cfg.grid % multiple)
    throw ConfigError("synth grid must be >= 16 and divisible by " + std::to_string(multiple));
  if (cfg.wall_px < 1) throw ConfigError("synth wall_px must be >= 1");
  if (cfg.min_rooms < 1 || cfg.min_rooms > cfg.max_rooms ||
      cfg.max_rooms > 3 * palette.num_room_classes())
    throw ConfigError("synth room counts need 1 <= min_rooms <= max_rooms <= 3 * room classes");

  constexpr int kMinSide = 3;
  constexpr int kMaxAttempts = 64;
  const int wp = cfg.wall_px;
  const auto room_ids = palette.room_ids();
  std::mt19937_64 rng(seed);

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    SyntheticLayout out;
    const int g = cfg.grid;
    auto extent = [&] {
      const double f = std::uniform_real_distribution<double>(0.6, 0.9)(rng);
      return std::clamp(static_cast<int>(std::lround(f * g)), 2 * wp + kMinSide, g - 2);
    };
    const int oh = extent(), ow = extent();
    const int top = detail::uniform_int(rng, 1, g - oh - 1);
    const int left = detail::uniform_int(rng, 1, g - ow - 1);
    out.outer = {top, left, top + oh, left + ow};

    struct Leaf {
      PixelRect rect;
      int depth;
    };
    std::vector<Leaf> leaves{{{top + wp, left + wp, top + oh - wp, left + ow - wp}, 0}};
    const int k = detail::uniform_int(rng, cfg.min_rooms, cfg.max_rooms);
    // (vertical?, wall strip, side A, side B) per cut
    struct Cut {
      bool vertical;
      PixelRect wall;
    };
    std::vector<Cut> cuts;
    bool stuck = false;
    while (static_cast<int>(leaves.size()) < k) {
      auto can_split = [&](const PixelRect& r, bool vertical) {
        const int span = vertical ? r.width() : r.height();
        return span >= 2 * kMinSide + wp;
      };
      int pick = -1;
      long best_area = -1;
      for (int i = 0; i < static_cast<int>(leaves.size()); ++i) {
        const auto& r = leaves[i].rect;
        if (!can_split(r, true) && !can_split(r, false)) continue;
        const long area = static_cast<long>(r.height()) * r.width();
        if (area > best_area) {
          best_area = area;
          pick = i;
        }
      }
      if (pick < 0) {
        stuck = true;
        break;
      }
      const Leaf leaf = leaves[pick];
      bool vertical = leaf.depth % 2 == 0;
      if (!can_split(leaf.rect, vertical)) vertical = !vertical;
      const auto& r = leaf.rect;
      Leaf a{r, leaf.depth + 1}, b{r, leaf.depth + 1};
      PixelRect wall = r;
      if (vertical) {
        const int c = detail::uniform_int(rng, r.c0 + kMinSide, r.c1 - kMinSide - wp);
        wall.c0 = c;
        wall.c1 = c + wp;
        a.rect.c1 = c;
        b.rect.c0 = c + wp;
      } else {
        const int rr = detail::uniform_int(rng, r.r0 + kMinSide, r.r1 - kMinSide - wp);
        wall.r0 = rr;
        wall.r1 = rr + wp;
        a.rect.r1 = rr;
        b.rect.r0 = rr + wp;
      }
      cuts.push_back({vertical, wall});
      leaves[pick] = a;
      leaves.insert(leaves.begin() + pick + 1, b);
    }
    if (stuck) continue;

    const int bg = palette.background_id(), st = palette.structure_id();
    LabelGrid target(g, g, bg);
    for (int r = out.outer.r0; r < out.outer.r1; ++r)
      for (int c = out.outer.c0; c < out.outer.c1; ++c) target.at(r, c) = st;
    for (const auto& leaf : leaves) {
      const int cat = room_ids[detail::uniform_int(rng, 0, static_cast<int>(room_ids.size()) - 1)];
      out.rooms.push_back(leaf.rect);
      out.categories.push_back(cat);
      for (int r = leaf.rect.r0; r < leaf.rect.r1; ++r)
        for (int c = leaf.rect.c0; c < leaf.rect.c1; ++c) target.at(r, c) = cat;
    }

    // A 2-pixel doorway through every cut wall, placed where rooms lie on
    // both sides. The opening takes the class of the room on the first side.
    bool blocked = false;
    for (const auto& cut : cuts) {
      const PixelRect& w = cut.wall;
      std::vector<int> starts;
      const int lo = cut.vertical ? w.r0 : w.c0;
      const int hi = cut.vertical ? w.r1 : w.c1;
      auto side_ok = [&](int t) {
        if (cut.vertical) {
          return palette.is_room(target.at(t, w.c0 - 1)) && palette.is_room(target.at(t, w.c1)) &&
                 target.at(t, w.c0) == st;
        }
        return palette.is_room(target.at(w.r0 - 1, t)) && palette.is_room(target.at(w.r1, t)) &&
               target.at(w.r0, t) == st;
      };
      for (int t = lo; t + 1 < hi; ++t)
        if (side_ok(t) && side_ok(t + 1)) starts.push_back(t);
      if (starts.empty()) {
        blocked = true;
        break;
      }
      const int t = starts[detail::uniform_int(rng, 0, static_cast<int>(starts.size()) - 1)];
      PixelRect door = w;
      if (cut.vertical) {
        door.r0 = t;
        door.r1 = t + 2;
      } else {
        door.c0 = t;
        door.c1 = t + 2;
      }
      const int cls = cut.vertical ? target.at(t, w.c0 - 1) : target.at(w.r0 - 1, t);
      for (int r = door.r0; r < door.r1; ++r)
        for (int c = door.c0; c < door.c1; ++c) target.at(r, c) = cls;
      out.cut_walls.push_back(w);
      out.doorways.push_back(door);
    }
    if (blocked) continue;

    RawBoundary raw(g, g, 0.0f);
    for (std::size_t i = 0; i < target.size(); ++i)
      raw.values[i] = target.values[i] == st ? 1.0f : 0.0f;
    out.sample.id = "synth-" + std::to_string(seed);
    out.sample.boundary = build_boundary_channels(raw, extract_exterior_mask(raw));
    out.sample.graph = graph_from_plan(target, palette);
    out.sample.target = std::move(target);
    return out;
  }
  throw ConfigError("synth: cannot fit the requested rooms into a " + std::to_string(cfg.grid) +
                    "px grid");
}

inline Sample generate_synthetic(std::uint64_t seed, const SynthConfig& cfg,
                                 const ClassPalette& palette) {
  return generate_synthetic_layout(seed, cfg, palette).sample;
}

// Fisher-Yates with an explicit draw so the order does not depend on the
// standard library's shuffle.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

inline std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& m,
                                                                 double train_ratio,
                                                                 double val_ratio,
                                                                 std::uint64_t seed) {
  if (!(train_ratio > 0.0) || !(val_ratio > 0.0) ||
      std::abs(train_ratio + val_ratio - 1.0) > 1e-9)
    throw ConfigError("split ratios must be positive and sum to 1");
  const auto perm = seeded_permutation(m.records.size(), seed);
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_ratio * static_cast<double>(m.records.size())));
  DatasetManifest train{{}, m.base_dir, "train"}, val{{}, m.base_dir, "val"};
  for (std::size_t i = 0; i < perm.size(); ++i)
    (i < n_train ? train : val).records.push_back(m.records[perm[i]]);
  return {train, val};
}

template <typename T>
struct BatchTensors {
  int height = 0;
  int width = 0;
  std::vector<BoundaryImage> boundaries;
  std::vector<GraphInput<T>> graphs;
  std::vector<LabelGrid> targets;  // empty grid when absent
  std::vector<bool> has_target;

  std::size_t size() const { return boundaries.size(); }
};

template <typename T>
BatchTensors<T> pack_batch(const std::vector<const Sample*>& samples, int height, int width,
                           const ClassPalette& palette, int multiple) {
  if (height < 1 || width < 1 || height % multiple || width % multiple)
    throw DimensionError("batch size " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by " + std::to_string(multiple));
  BatchTensors<T> b;
  b.height = height;
  b.width = width;
  for (const Sample* s : samples) {
    b.boundaries.push_back(resize_boundary(s->boundary, height, width));
    b.graphs.push_back(make_graph_input<T>(s->graph, palette));
    if (s->target) {
      b.targets.push_back(resize_nearest(*s->target, height, width));
      b.has_target.push_back(true);
    } else {
      b.targets.emplace_back();
      b.has_target.push_back(false);
    }
  }
  return b;
}

}  // namespace floorplan
