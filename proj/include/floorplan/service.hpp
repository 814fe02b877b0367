#pragma once

#include <zlib.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "floorplan/checkpoint.hpp"
#include "floorplan/codec.hpp"
#include "floorplan/errors.hpp"
#include "floorplan/evaluation.hpp"
#include "floorplan/geometry.hpp"
#include "floorplan/image_io.hpp"
#include "floorplan/layout_graph.hpp"
#include "floorplan/model.hpp"

// After Eigen: a system header pulled in by httplib defines macros that
// collide with Eigen internals.
#include <httplib.h>

namespace floorplan {

struct ServiceOptions {
  int max_concurrent = 2;
  int default_resolution = 64;
  std::string cors_origin = "*";
};

struct FieldError {
  std::string field;
  std::string message;
};

// Boundary as closed wall polylines in normalised coordinates, stroked at
// `wall_px` pixels. A path with closed=false is stroked as an open polyline.
struct PolygonBoundary {
  std::vector<WallPath> paths;
  double wall_px = 1.0;
};

struct GenerateRequest {
  std::optional<PolygonBoundary> polygons;
  std::optional<std::vector<std::uint8_t>> struct_png;
  LayoutGraph graph;
  bool return_png = false;
  int resolution = 0;
};

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

inline std::string model_version_of(const TrainState& s) {
  // The file ends in its own CRC32; hashing that too would give a constant.
  const auto bytes = encode_checkpoint(s);
  const auto crc = crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4));
  char hex[9];
  std::snprintf(hex, sizeof hex, "%08lx", static_cast<unsigned long>(crc));
  return "step" + std::to_string(s.step) + "-" + hex;
}

inline nlohmann::json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

namespace detail {

inline bool parse_point(const nlohmann::json& v, Point& p) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) return false;
  p = {v[0].get<double>(), v[1].get<double>()};
  return std::isfinite(p.x) && std::isfinite(p.y);
}

}  // namespace detail

// Schema checks only; graph rules and geometry are checked later so that
// they can be reported with their own status.
inline GenerateRequest parse_generate_request(const nlohmann::json& j, const ClassPalette& palette,
                                              const ServiceOptions& opt, int multiple,
                                              std::vector<FieldError>& errors) {
  GenerateRequest req;
  req.resolution = opt.default_resolution;
  if (!j.is_object()) {
    errors.push_back({"<root>", "expected an object"});
    return req;
  }
  for (const auto& [key, _] : j.items())
    if (key != "boundary" && key != "graph" && key != "options")
      errors.push_back({key, "unknown field"});

  if (!j.contains("boundary") || !j["boundary"].is_object()) {
    errors.push_back({"boundary", "required object"});
  } else {
    const auto& b = j["boundary"];
    const bool has_poly = b.contains("polygons"), has_img = b.contains("image");
    if (has_poly == has_img)
      errors.push_back({"boundary", "give exactly one of 'polygons' or 'image'"});
    for (const auto& [key, _] : b.items())
      if (key != "polygons" && key != "image" && key != "wall_px")
        errors.push_back({"boundary." + key, "unknown field"});
    if (has_poly) {
      PolygonBoundary pb;
      const auto& polys = b["polygons"];
      if (!polys.is_array() || polys.empty()) {
        errors.push_back({"boundary.polygons", "expected a non-empty array"});
      } else {
        for (std::size_t i = 0; i < polys.size(); ++i) {
          const std::string where = "boundary.polygons[" + std::to_string(i) + "]";
          const auto& p = polys[i];
          WallPath path;
          const nlohmann::json* verts = &p;
          if (p.is_object()) {
            if (!p.contains("vertices")) {
              errors.push_back({where + ".vertices", "required"});
              continue;
            }
            verts = &p["vertices"];
            if (p.contains("closed")) {
              if (!p["closed"].is_boolean()) errors.push_back({where + ".closed", "expected a boolean"});
              else path.closed = p["closed"].get<bool>();
            }
          }
          if (!verts->is_array() || verts->size() < 2) {
            errors.push_back({where, "expected at least 2 vertices"});
            continue;
          }
          for (std::size_t k = 0; k < verts->size(); ++k) {
            Point pt;
            if (!detail::parse_point((*verts)[k], pt))
              errors.push_back({where + "[" + std::to_string(k) + "]", "expected [x, y]"});
            path.vertices.push_back(pt);
          }
          pb.paths.push_back(std::move(path));
        }
      }
      if (b.contains("wall_px")) {
        if (!b["wall_px"].is_number() || !(b["wall_px"].get<double>() >= 1.0) ||
            b["wall_px"].get<double>() > 64.0)
          errors.push_back({"boundary.wall_px", "expected a number in [1, 64]"});
        else pb.wall_px = b["wall_px"].get<double>();
      }
      req.polygons = std::move(pb);
    }
    if (has_img) {
      if (!b["image"].is_string()) {
        errors.push_back({"boundary.image", "expected a base64 string"});
      } else {
        try {
          req.struct_png = base64_decode(b["image"].get<std::string>());
        } catch (const ParseError& e) {
          errors.push_back({"boundary.image", e.what()});
        }
      }
    }
  }

  if (!j.contains("graph")) {
    errors.push_back({"graph", "required"});
  } else {
    try {
      req.graph = graph_from_json_value(j["graph"], palette, /*keep_duplicates=*/true).graph;
    } catch (const ParseError& e) {
      errors.push_back({"graph", e.what()});
    }
  }

  if (j.contains("options")) {
    const auto& o = j["options"];
    if (!o.is_object()) {
      errors.push_back({"options", "expected an object"});
    } else {
      for (const auto& [key, _] : o.items())
        if (key != "return_png" && key != "resolution")
          errors.push_back({"options." + key, "unknown field"});
      if (o.contains("return_png")) {
        if (!o["return_png"].is_boolean()) errors.push_back({"options.return_png", "expected a boolean"});
        else req.return_png = o["return_png"].get<bool>();
      }
      if (o.contains("resolution")) {
        if (!o["resolution"].is_number_integer()) errors.push_back({"options.resolution", "expected an integer"});
        else req.resolution = o["resolution"].get<int>();
      }
    }
  }
  if (req.resolution < 32 || req.resolution > 1024 || req.resolution % multiple != 0)
    errors.push_back({"options.resolution", "must be in [32, 1024] and divisible by " +
                                                std::to_string(multiple)});
  return req;
}

inline BoundaryImage boundary_for_request(const GenerateRequest& req) {
  const int n = req.resolution;
  if (req.polygons) {
    const RawBoundary raw = rasterize_walls(req.polygons->paths, req.polygons->wall_px, n, n);
    return boundary_from_raw(raw);
  }
  // Channels are built at the image's own size and then resampled with
  // nearest neighbour, which keeps every plane on its value set.
  const BoundaryImage native = boundary_from_raw(raw_from_image(decode_png(*req.struct_png)));
  return native.height == n && native.width == n ? native : resize_boundary(native, n, n);
}

// Request handling without the transport, so that tests can drive it
// directly. Loaded parameters are never mutated after load().
class Service {
 public:
  Service(ClassPalette palette, ServiceOptions opt = {})
      : palette_(std::move(palette)), opt_(opt), slots_(opt.max_concurrent) {
    if (opt.max_concurrent < 1 || opt.max_concurrent > kMaxSlots)
      throw ConfigError("serve.max_concurrent must be in [1, 64]");
  }

  void load(ModelParams<float> params, std::string version) {
    if (params.config.classes != palette_.num_classes())
      throw ConfigError("checkpoint class count does not match the palette");
    params_ = std::make_shared<const ModelParams<float>>(std::move(params));
    version_ = std::move(version);
  }

  void load_checkpoint(const std::filesystem::path& path) {
    TrainState s = floorplan::load_checkpoint(path);
    const auto version = model_version_of(s);
    load(std::move(s.params), version);
  }

  bool loaded() const { return params_ != nullptr; }
  const std::string& model_version() const { return version_; }
  const ClassPalette& palette() const { return palette_; }
  const ServiceOptions& options() const { return opt_; }

  HttpReply health() const {
    if (!loaded()) return {503, {{"status", "loading"}, {"model_version", nullptr}}};
    return {200, {{"status", "ok"}, {"model_version", version_}}};
  }

  HttpReply classes() const { return {200, palette_to_json(palette_)}; }

  HttpReply generate(const std::string& body) const {
    if (!loaded()) return {503, error_body("model_not_loaded", "no model is loaded")};
    const auto started = std::chrono::steady_clock::now();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      return {400, error_body("invalid_json", e.what())};
    }
    std::vector<FieldError> errors;
    const auto req = parse_generate_request(j, palette_, opt_, params_->config.multiple(), errors);
    if (!errors.empty()) {
      auto out = error_body("invalid_request", "request failed schema validation");
      for (const auto& e : errors)
        out["error"]["fields"].push_back({{"field", e.field}, {"message", e.message}});
      return {400, out};
    }
    if (const auto v = validate_graph(req.graph, palette_); !v.empty()) {
      auto out = error_body("invalid_graph", "layout graph violates " + std::to_string(v.size()) +
                                                 " rule(s)");
      for (const auto& x : v)
        out["error"]["violations"].push_back({{"rule", x.rule}, {"subject", x.subject}});
      return {422, out};
    }
    LabelGrid labels;
    try {
      const BoundaryImage boundary = boundary_for_request(req);
      SlotGuard slot(slots_);
      labels = predict_native(*params_, boundary, req.graph, palette_);
    } catch (const Error& e) {
      const int status = e.kind() == ErrorKind::kData && e.code() != "parse_error" ? 422 : 400;
      return {e.kind() == ErrorKind::kNumeric ? 500 : status, error_body(e.code(), e.what())};
    }
    nlohmann::json out;
    out["labels"] = to_json(rle_encode(labels));
    out["labels"]["palette_version"] = palette_.version();
    if (req.return_png) out["png"] = base64_encode(encode_rgb_png(render_plan(labels, palette_)));
    out["model_version"] = version_;
    out["timing_ms"] = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - started)
                           .count();
    return {200, out};
  }

  static nlohmann::json openapi() {
    auto op = [](const char* summary, const char* codes) {
      nlohmann::json responses = nlohmann::json::object();
      for (const char* c = codes; *c; c += 4) responses[std::string(c, 3)] = {{"description", ""}};
      return nlohmann::json{{"summary", summary}, {"responses", responses}};
    };
    return {{"openapi", "3.0.3"},
            {"info", {{"title", "floorplan generation service"}, {"version", "1"}}},
            {"paths",
             {{"/v1/generate",
               {{"post", op("Generate a floor plan from a boundary and a room graph",
                            "200 400 422 503 ")}}},
              {"/v1/health", {{"get", op("Service and model status", "200 503 ")}}},
              {"/v1/classes", {{"get", op("Class palette", "200 ")}}},
              {"/v1/spec", {{"get", op("This document", "200 ")}}}}}};
  }

  // Routes plus CORS headers on every response.
  void bind(httplib::Server& server) const {
    server.set_payload_max_length(32u << 20);
    const std::string origin = opt_.cors_origin;
    auto send = [origin](httplib::Response& res, const HttpReply& r) {
      res.status = r.status;
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_content(r.body.dump(), "application/json");
    };
    server.Options(R"(/v1/.*)", [origin](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
    server.Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, health());
    });
    server.Get("/v1/classes", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, classes());
    });
    server.Get("/v1/spec", [send](const httplib::Request&, httplib::Response& res) {
      send(res, {200, openapi()});
    });
    server.Post("/v1/generate", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, generate(req.body));
    });
    server.set_exception_handler(
        [send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          std::string what = "unknown error";
          try {
            std::rethrow_exception(ep);
          } catch (const std::exception& e) {
            what = e.what();
          } catch (...) {
          }
          send(res, {500, error_body("internal", what)});
        });
  }

 private:
  static constexpr std::ptrdiff_t kMaxSlots = 64;

  struct SlotGuard {
    explicit SlotGuard(std::counting_semaphore<kMaxSlots>& s) : sem(s) { sem.acquire(); }
    ~SlotGuard() { sem.release(); }
    std::counting_semaphore<kMaxSlots>& sem;
  };

  ClassPalette palette_;
  ServiceOptions opt_;
  std::shared_ptr<const ModelParams<float>> params_;
  std::string version_;
  mutable std::counting_semaphore<kMaxSlots> slots_;
};

}  // namespace floorplan
