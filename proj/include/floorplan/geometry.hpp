#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "floorplan/errors.hpp"
#include "floorplan/palette.hpp"

namespace floorplan {

// Row-major single-channel grid.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(int h, int w, T fill = T{})
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  T& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  const T& at(int r, int c) const {
    return values[static_cast<std::size_t>(r) * width + c];
  }
  std::size_t size() const { return values.size(); }
  bool same_dims(int h, int w) const { return height == h && width == w; }

  bool operator==(const Grid&) const = default;
};

// 1 = structure/wall pixel, 0 = open.
using RawBoundary = Grid<float>;
// Per-pixel room-class map (ground truth "full" or prediction).
using LabelGrid = Grid<std::int32_t>;

enum class MaskSemantics { kInterior, kExterior };

struct BinaryMask : Grid<std::uint8_t> {
  MaskSemantics semantics = MaskSemantics::kExterior;

  BinaryMask() = default;
  BinaryMask(int h, int w, MaskSemantics s)
      : Grid<std::uint8_t>(h, w, 0), semantics(s) {}

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1));
  }
  bool operator==(const BinaryMask&) const = default;
};

// Three planes: 0 in-wall-out, 1 in-out, 2 raw-boundary.
struct BoundaryImage {
  static constexpr int kChannels = 3;
  static constexpr int kInWallOut = 0;
  static constexpr int kInOut = 1;
  static constexpr int kRaw = 2;

  int height = 0;
  int width = 0;
  std::vector<float> data;

  BoundaryImage() = default;
  BoundaryImage(int h, int w)
      : height(h), width(w), data(static_cast<std::size_t>(kChannels) * h * w, 0.0f) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  std::span<float> channel(int k) {
    return {data.data() + k * plane_size(), plane_size()};
  }
  std::span<const float> channel(int k) const {
    return {data.data() + k * plane_size(), plane_size()};
  }
  float& at(int k, int r, int c) {
    return data[k * plane_size() + static_cast<std::size_t>(r) * width + c];
  }
  float at(int k, int r, int c) const {
    return data[k * plane_size() + static_cast<std::size_t>(r) * width + c];
  }

  bool operator==(const BoundaryImage&) const = default;
};

// Returns an empty string when every pixel satisfies the channel value sets
// and cross-channel rules; otherwise a description of the first violation.
inline std::string check_boundary_invariants(const BoundaryImage& b) {
  const std::size_t n = b.plane_size();
  if (b.data.size() != 3 * n) return "data size does not match 3*H*W";
  for (std::size_t i = 0; i < n; ++i) {
    const float v0 = b.data[i], v1 = b.data[n + i], v2 = b.data[2 * n + i];
    const std::string where = " at pixel " + std::to_string(i);
    if (v0 != 0.0f && v0 != 0.5f && v0 != 1.0f) return "ch0 off-palette" + where;
    if (v1 != 0.0f && v1 != 1.0f) return "ch1 not binary" + where;
    if (v2 != 0.0f && v2 != 1.0f) return "ch2 not binary" + where;
    if ((v0 == 0.5f) != (v2 == 1.0f)) return "ch0 wall does not match ch2" + where;
    if (v0 == 1.0f && v1 != 1.0f) return "interior pixel outside in-out" + where;
  }
  return {};
}

inline RawBoundary threshold_boundary(const Grid<float>& gray, float threshold = 0.5f) {
  RawBoundary out(gray.height, gray.width);
  for (std::size_t i = 0; i < gray.size(); ++i)
    out.values[i] = gray.values[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

enum class InteriorPolicy { kRequire, kAllowEmpty };

// Exterior = open pixels 4-connected to the image border. Every open pixel
// that is not exterior is interior.
inline BinaryMask flood_fill_exterior(const RawBoundary& raw,
                                      InteriorPolicy policy = InteriorPolicy::kRequire) {
  if (raw.height < 1 || raw.width < 1) throw DimensionError("empty boundary raster");
  const int h = raw.height, w = raw.width;
  auto open = [&](int r, int c) { return raw.at(r, c) < 0.5f; };

  std::size_t open_count = 0;
  for (float v : raw.values) open_count += v < 0.5f ? 1 : 0;
  if (open_count == 0) throw AllWallError("boundary raster has no open pixel");

  BinaryMask ext(h, w, MaskSemantics::kExterior);
  std::vector<std::pair<int, int>> stack;
  auto seed = [&](int r, int c) {
    if (open(r, c) && !ext.at(r, c)) {
      ext.at(r, c) = 1;
      stack.emplace_back(r, c);
    }
  };
  for (int c = 0; c < w; ++c) {
    seed(0, c);
    seed(h - 1, c);
  }
  for (int r = 0; r < h; ++r) {
    seed(r, 0);
    seed(r, w - 1);
  }
  constexpr std::array<std::pair<int, int>, 4> kSteps{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
  while (!stack.empty()) {
    auto [r, c] = stack.back();
    stack.pop_back();
    for (auto [dr, dc] : kSteps) {
      const int rr = r + dr, cc = c + dc;
      if (rr >= 0 && rr < h && cc >= 0 && cc < w) seed(rr, cc);
    }
  }
  if (policy == InteriorPolicy::kRequire && ext.count() == open_count)
    throw NoInteriorError("every open pixel connects to the border; boundary is not closed");
  return ext;
}

// Pluggable exterior extraction backend. The default is the border-seeded
// flood fill above; a segmentation-model backend can be swapped in.
using ExteriorExtractor = std::function<BinaryMask(const RawBoundary&, InteriorPolicy)>;

inline BinaryMask extract_exterior_mask(const RawBoundary& raw,
                                        InteriorPolicy policy = InteriorPolicy::kRequire,
                                        const ExteriorExtractor& backend = {}) {
  return backend ? backend(raw, policy) : flood_fill_exterior(raw, policy);
}

inline BinaryMask interior_mask(const RawBoundary& raw, const BinaryMask& exterior) {
  if (!exterior.same_dims(raw.height, raw.width))
    throw DimensionMismatch("exterior mask and raw boundary differ in size");
  BinaryMask in(raw.height, raw.width, MaskSemantics::kInterior);
  for (std::size_t i = 0; i < raw.size(); ++i)
    in.values[i] = (raw.values[i] < 0.5f && !exterior.values[i]) ? 1 : 0;
  return in;
}

// Walls count as inside for the in-out plane.
inline BoundaryImage build_boundary_channels(const RawBoundary& raw,
                                             const BinaryMask& exterior) {
  if (!exterior.same_dims(raw.height, raw.width))
    throw DimensionMismatch("exterior mask " + std::to_string(exterior.height) + "x" +
                            std::to_string(exterior.width) + " vs raw " +
                            std::to_string(raw.height) + "x" + std::to_string(raw.width));
  BoundaryImage b(raw.height, raw.width);
  const std::size_t n = b.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool wall = raw.values[i] >= 0.5f;
    const bool outside = !wall && exterior.values[i];
    b.data[i] = wall ? 0.5f : (outside ? 0.0f : 1.0f);
    b.data[n + i] = outside ? 0.0f : 1.0f;
    b.data[2 * n + i] = wall ? 1.0f : 0.0f;
  }
  return b;
}

inline BoundaryImage boundary_from_raw(const RawBoundary& raw) {
  return build_boundary_channels(raw, extract_exterior_mask(raw));
}

// Nearest-neighbour source index for destination index i.
inline int nearest_index(int i, int src, int dst) {
  return static_cast<int>(static_cast<long long>(i) * src / dst);
}

template <typename T>
Grid<T> resize_nearest(const Grid<T>& g, int h, int w) {
  if (h < 1 || w < 1) throw DimensionError("resize target must be at least 1x1");
  Grid<T> out(h, w);
  for (int r = 0; r < h; ++r) {
    const int sr = nearest_index(r, g.height, h);
    for (int c = 0; c < w; ++c) out.at(r, c) = g.at(sr, nearest_index(c, g.width, w));
  }
  return out;
}

inline BoundaryImage resize_boundary(const BoundaryImage& b, int h, int w) {
  if (h < 1 || w < 1) throw DimensionError("resize target must be at least 1x1");
  if (h == b.height && w == b.width) return b;
  BoundaryImage out(h, w);
  for (int k = 0; k < BoundaryImage::kChannels; ++k)
    for (int r = 0; r < h; ++r) {
      const int sr = nearest_index(r, b.height, h);
      for (int c = 0; c < w; ++c)
        out.at(k, r, c) = b.at(k, sr, nearest_index(c, b.width, w));
    }
  return out;
}

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

// Vertices in normalised [0,1]^2, x to the right, y downward.
struct Polygon {
  std::vector<Point> vertices;
  bool operator==(const Polygon&) const = default;
};

inline double signed_area(const Polygon& p) {
  double a = 0.0;
  const std::size_t n = p.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& u = p.vertices[i];
    const Point& v = p.vertices[(i + 1) % n];
    a += u.x * v.y - v.x * u.y;
  }
  return 0.5 * a;
}

namespace detail {

inline double cross(Point o, Point a, Point b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline bool on_segment(Point p, Point a, Point b, double eps = 1e-12) {
  if (std::abs(cross(a, b, p)) > eps) return false;
  return p.x >= std::min(a.x, b.x) - eps && p.x <= std::max(a.x, b.x) + eps &&
         p.y >= std::min(a.y, b.y) - eps && p.y <= std::max(a.y, b.y) + eps;
}

inline bool segments_intersect(Point a, Point b, Point c, Point d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b);
  const double d3 = cross(a, b, c), d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  return on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) ||
         on_segment(d, a, b);
}

}  // namespace detail

// Empty string when the polygon is valid, otherwise the reason.
inline std::string polygon_problem(const Polygon& p) {
  const std::size_t n = p.vertices.size();
  if (n < 3) return "polygon needs at least 3 vertices";
  for (const auto& v : p.vertices)
    if (!std::isfinite(v.x) || !std::isfinite(v.y)) return "non-finite vertex";
  if (std::abs(signed_area(p)) <= 0.0) return "polygon has zero area";
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (detail::segments_intersect(p.vertices[i], p.vertices[(i + 1) % n],
                                     p.vertices[j], p.vertices[(j + 1) % n]))
        return "polygon edges " + std::to_string(i) + " and " + std::to_string(j) +
               " intersect";
    }
  return {};
}

// Points on an edge count as inside.
inline bool point_in_polygon(const Polygon& poly, Point p) {
  const auto& v = poly.vertices;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i)
    if (detail::on_segment(p, v[i], v[(i + 1) % n])) return true;
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y)) {
      const double x = v[j].x + (p.y - v[j].y) * (v[i].x - v[j].x) / (v[i].y - v[j].y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

struct Room {
  Polygon polygon;
  int class_id = 0;
};

// Pixel-centre membership; later rooms overwrite earlier ones.
inline LabelGrid rasterize_polygons(const std::vector<Room>& rooms,
                                    const ClassPalette& palette, int h, int w) {
  if (h < 1 || w < 1) throw DimensionError("raster must be at least 1x1");
  LabelGrid out(h, w, palette.background_id());
  for (std::size_t k = 0; k < rooms.size(); ++k) {
    const auto& room = rooms[k];
    if (auto why = polygon_problem(room.polygon); !why.empty())
      throw InvalidPolygon("room " + std::to_string(k) + ": " + why);
    if (!palette.contains(room.class_id))
      throw UnknownClassId("room " + std::to_string(k) + " has class id " +
                           std::to_string(room.class_id));
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        if (point_in_polygon(room.polygon, {(c + 0.5) / w, (r + 0.5) / h}))
          out.at(r, c) = room.class_id;
  }
  return out;
}

struct WallPath {
  std::vector<Point> vertices;
  bool closed = true;
};

// Strokes wall paths into a raw boundary raster. A pixel is a wall when the
// segment passes within half the thickness of its centre in the max-norm, so a
// one-pixel stroke is a 4-connected supercover line that flood fill cannot
// leak through.
inline RawBoundary rasterize_walls(const std::vector<WallPath>& paths, double thickness_px,
                                   int h, int w) {
  if (h < 1 || w < 1) throw DimensionError("raster must be at least 1x1");
  if (!(thickness_px >= 1.0)) throw InvalidPolygon("wall thickness must be >= 1 pixel");
  RawBoundary out(h, w, 0.0f);
  const double half = 0.5 * thickness_px;
  // Liang-Barsky clip of segment a->b against the box around (cx, cy).
  auto hits_box = [half](Point a, Point b, double cx, double cy) {
    double t0 = 0.0, t1 = 1.0;
    const double dx = b.x - a.x, dy = b.y - a.y;
    const std::array<std::pair<double, double>, 4> pq{{{-dx, a.x - (cx - half)},
                                                       {dx, (cx + half) - a.x},
                                                       {-dy, a.y - (cy - half)},
                                                       {dy, (cy + half) - a.y}}};
    for (auto [p, q] : pq) {
      if (p == 0.0) {
        if (q < 0.0) return false;
        continue;
      }
      const double t = q / p;
      if (p < 0.0) t0 = std::max(t0, t);
      else t1 = std::min(t1, t);
      if (t0 > t1) return false;
    }
    return true;
  };
  for (std::size_t k = 0; k < paths.size(); ++k) {
    const auto& path = paths[k];
    if (path.vertices.size() < 2)
      throw InvalidPolygon("wall path " + std::to_string(k) + " needs at least 2 vertices");
    const std::size_t n = path.vertices.size();
    const std::size_t segments = path.closed ? n : n - 1;
    for (std::size_t s = 0; s < segments; ++s) {
      const Point a{path.vertices[s].x * w, path.vertices[s].y * h};
      const Point b{path.vertices[(s + 1) % n].x * w, path.vertices[(s + 1) % n].y * h};
      const int c0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - half - 1)));
      const int c1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + half + 1)));
      const int r0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - half - 1)));
      const int r1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + half + 1)));
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c)
          if (hits_box(a, b, c + 0.5, r + 0.5)) out.at(r, c) = 1.0f;
    }
  }
  return out;
}

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major

  Rgb at(int r, int c) const {
    const std::size_t i = 3 * (static_cast<std::size_t>(r) * width + c);
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
  bool operator==(const RgbImage&) const = default;
};

inline RgbImage render_plan(const LabelGrid& labels, const ClassPalette& palette) {
  RgbImage img{labels.height, labels.width,
               std::vector<std::uint8_t>(3 * labels.size())};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int id = labels.values[i];
    if (!palette.contains(id))
      throw UnknownClassId("label " + std::to_string(id) + " at pixel " + std::to_string(i) +
                           " is not in the palette");
    const Rgb& rgb = palette.entry(id).rgb;
    std::copy(rgb.begin(), rgb.end(), img.pixels.begin() + 3 * i);
  }
  return img;
}

inline LabelGrid labels_from_rgb(const RgbImage& img, const ClassPalette& palette) {
  LabelGrid out(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      const Rgb rgb = img.at(r, c);
      auto id = palette.find_by_rgb(rgb);
      if (!id)
        throw UnknownClassId("color (" + std::to_string(rgb[0]) + "," + std::to_string(rgb[1]) +
                             "," + std::to_string(rgb[2]) + ") at row " + std::to_string(r) +
                             " col " + std::to_string(c) + " is not in the palette");
      out.at(r, c) = *id;
    }
  return out;
}

}  // namespace floorplan
