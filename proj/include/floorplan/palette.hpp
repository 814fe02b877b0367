#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "floorplan/errors.hpp"

namespace floorplan {

using Rgb = std::array<std::uint8_t, 3>;

struct PaletteEntry {
  int id = 0;
  std::string name;
  Rgb rgb{};

  bool operator==(const PaletteEntry&) const = default;
};

// Class table shared by ground truth, predictions and renders. Ids are
// 0..C-1; background and structure are the two non-room classes.
class ClassPalette {
 public:
  ClassPalette() = default;
  ClassPalette(std::vector<PaletteEntry> entries, int background_id,
               int structure_id, std::string version = "custom")
      : entries_(std::move(entries)),
        background_id_(background_id),
        structure_id_(structure_id),
        version_(std::move(version)) {
    validate();
  }

  // Background, structure and six room types loosely following MSD's
  // residential categories.
  static ClassPalette default_palette() {
    return ClassPalette({{0, "background", {255, 255, 255}},
                         {1, "structure", {40, 40, 40}},
                         {2, "bedroom", {230, 159, 0}},
                         {3, "living", {86, 180, 233}},
                         {4, "kitchen", {0, 158, 115}},
                         {5, "bathroom", {240, 228, 66}},
                         {6, "corridor", {0, 114, 178}},
                         {7, "storage", {204, 121, 167}}},
                        0, 1, "default-v1");
  }

  int num_classes() const { return static_cast<int>(entries_.size()); }
  int num_room_classes() const { return num_classes() - 2; }
  int background_id() const { return background_id_; }
  int structure_id() const { return structure_id_; }
  const std::string& version() const { return version_; }
  const std::vector<PaletteEntry>& entries() const { return entries_; }
  const PaletteEntry& entry(int id) const {
    if (!contains(id)) throw UnknownClassId("unknown class id " + std::to_string(id));
    return entries_[static_cast<std::size_t>(id)];
  }

  bool contains(int id) const { return id >= 0 && id < num_classes(); }
  bool is_room(int id) const {
    return contains(id) && id != background_id_ && id != structure_id_;
  }

  // Room class ids in ascending order; position in this list is the one-hot
  // slot used for node features.
  std::vector<int> room_ids() const {
    std::vector<int> out;
    for (const auto& e : entries_)
      if (is_room(e.id)) out.push_back(e.id);
    return out;
  }
  int room_index(int id) const {
    int slot = 0;
    for (const auto& e : entries_) {
      if (!is_room(e.id)) continue;
      if (e.id == id) return slot;
      ++slot;
    }
    return -1;
  }

  std::optional<int> find_by_name(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.id;
    return std::nullopt;
  }
  std::optional<int> find_by_rgb(const Rgb& rgb) const {
    for (const auto& e : entries_)
      if (e.rgb == rgb) return e.id;
    return std::nullopt;
  }

  bool operator==(const ClassPalette&) const = default;

 private:
  void validate() const {
    if (entries_.size() < 3)
      throw ConfigError("palette needs background, structure and at least one room class");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].id != static_cast<int>(i))
        throw ConfigError("palette class ids must be contiguous 0..C-1 in order");
      for (std::size_t j = 0; j < i; ++j)
        if (entries_[j].name == entries_[i].name)
          throw ConfigError("duplicate palette class name '" + entries_[i].name + "'");
    }
    if (!contains(background_id_) || !contains(structure_id_) ||
        background_id_ == structure_id_)
      throw ConfigError("background and structure ids must be distinct valid ids");
  }

  std::vector<PaletteEntry> entries_;
  int background_id_ = 0;
  int structure_id_ = 1;
  std::string version_;
};

inline nlohmann::json palette_to_json(const ClassPalette& p) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& e : p.entries())
    classes.push_back({{"id", e.id}, {"name", e.name}, {"rgb", e.rgb}});
  return {{"version", p.version()},
          {"background_id", p.background_id()},
          {"structure_id", p.structure_id()},
          {"classes", classes}};
}

inline ClassPalette palette_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("palette: expected an object");
  for (const auto& [key, _] : j.items())
    if (key != "version" && key != "background_id" && key != "structure_id" &&
        key != "classes")
      throw ConfigError("palette: unknown key '" + key + "'");
  if (!j.contains("classes") || !j["classes"].is_array())
    throw ParseError("palette: missing array field 'classes'");
  try {
    std::vector<PaletteEntry> entries;
    for (const auto& c : j["classes"]) {
      PaletteEntry e;
      e.id = c.at("id").get<int>();
      e.name = c.at("name").get<std::string>();
      const auto rgb = c.at("rgb").get<std::vector<int>>();
      if (rgb.size() != 3) throw ParseError("palette: rgb needs 3 components");
      for (int k = 0; k < 3; ++k) {
        if (rgb[k] < 0 || rgb[k] > 255) throw ParseError("palette: rgb component out of range");
        e.rgb[k] = static_cast<std::uint8_t>(rgb[k]);
      }
      entries.push_back(std::move(e));
    }
    return ClassPalette(std::move(entries), j.value("background_id", 0),
                        j.value("structure_id", 1), j.value("version", "custom"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("palette: ") + e.what());
  }
}

}  // namespace floorplan
