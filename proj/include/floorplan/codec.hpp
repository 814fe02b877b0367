#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "floorplan/errors.hpp"
#include "floorplan/geometry.hpp"

namespace floorplan {

// Row-major run-length encoding of a label grid: runs are [class, length]
// pairs whose lengths sum to height * width.
struct RleLabels {
  int height = 0;
  int width = 0;
  std::vector<std::array<std::int32_t, 2>> runs;

  bool operator==(const RleLabels&) const = default;
};

inline RleLabels rle_encode(const LabelGrid& g) {
  RleLabels out{g.height, g.width, {}};
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!out.runs.empty() && out.runs.back()[0] == g.values[i]) ++out.runs.back()[1];
    else out.runs.push_back({g.values[i], 1});
  }
  return out;
}

inline LabelGrid rle_decode(const RleLabels& rle) {
  if (rle.height < 0 || rle.width < 0) throw ParseError("rle: negative dimensions");
  const auto total = static_cast<std::int64_t>(rle.height) * rle.width;
  std::int64_t sum = 0;
  for (const auto& [v, n] : rle.runs) {
    if (n <= 0) throw ParseError("rle: run length must be positive");
    sum += n;
    if (sum > total) break;
  }
  if (sum != total)
    throw ParseError("rle: runs cover " + std::to_string(sum) + " pixels, expected " +
                     std::to_string(total));
  LabelGrid g(rle.height, rle.width);
  std::size_t i = 0;
  for (const auto& [v, n] : rle.runs)
    for (int k = 0; k < n; ++k) g.values[i++] = v;
  return g;
}

// Runs are flattened to [c0, n0, c1, n1, ...] on the wire.
inline nlohmann::json to_json(const RleLabels& r) {
  std::vector<std::int32_t> flat;
  flat.reserve(2 * r.runs.size());
  for (const auto& [v, n] : r.runs) {
    flat.push_back(v);
    flat.push_back(n);
  }
  return {{"height", r.height}, {"width", r.width}, {"runs", flat}};
}

inline RleLabels rle_from_json(const nlohmann::json& j) {
  try {
    RleLabels r{j.at("height").get<int>(), j.at("width").get<int>(), {}};
    const auto flat = j.at("runs").get<std::vector<std::int32_t>>();
    if (flat.size() % 2) throw ParseError("rle: runs must hold [class, length] pairs");
    for (std::size_t i = 0; i < flat.size(); i += 2) r.runs.push_back({flat[i], flat[i + 1]});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("rle: ") + e.what());
  }
}

inline std::string base64_encode(std::string_view bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (static_cast<std::uint8_t>(bytes[i]) << 16) |
                            (static_cast<std::uint8_t>(bytes[i + 1]) << 8) |
                            static_cast<std::uint8_t>(bytes[i + 2]);
    for (int s = 18; s >= 0; s -= 6) out += kAlphabet[(v >> s) & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest) {
    std::uint32_t v = static_cast<std::uint8_t>(bytes[i]) << 16;
    if (rest == 2) v |= static_cast<std::uint8_t>(bytes[i + 1]) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  return base64_encode(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

// Strict decoder: padded input only, no whitespace.
inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4) throw ParseError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    const int pad = last ? (text[i + 3] == '=') + (text[i + 2] == '=') : 0;
    if (pad == 1 && text[i + 2] == '=') throw ParseError("base64: bad padding");
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      const int d = k >= 4 - pad ? 0 : value(text[i + k]);
      if (d < 0) throw ParseError("base64: invalid character at offset " + std::to_string(i + k));
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

}  // namespace floorplan
