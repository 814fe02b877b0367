#pragma once

#include <png.h>

#include <bit>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "floorplan/errors.hpp"
#include "floorplan/geometry.hpp"

namespace floorplan {

// Decoded 8-bit image, 1 (gray) or 3 (RGB) channels, row-major interleaved.
struct DecodedImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

struct PngReadState {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t offset;
};

inline void png_read_from_memory(png_structp png, png_bytep out, png_size_t count) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->offset + count > st->size) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, st->data + st->offset, count);
  st->offset += count;
}

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t count) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + count);
}

inline void png_flush_noop(png_structp) {}

struct PngErrorSlot {
  char message[256] = {};
};

// libpng is C; errors unwind by longjmp back to the setjmp in the caller,
// which converts them to exceptions.
[[noreturn]] inline void png_error_jump(png_structp png, png_const_charp msg) {
  auto* slot = static_cast<PngErrorSlot*>(png_get_error_ptr(png));
  if (slot) std::snprintf(slot->message, sizeof slot->message, "%s", msg);
  png_longjmp(png, 1);
}

inline void png_warning_ignore(png_structp, png_const_charp) {}

}  // namespace detail

// Gray+alpha and RGBA are reduced to gray and RGB; palette and 16-bit input
// is expanded/stripped to 8-bit.
inline DecodedImage decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    throw ParseError("not a PNG stream");
  detail::PngErrorSlot err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err,
                                           detail::png_error_jump, detail::png_warning_ignore);
  if (!png) throw ParseError("png: cannot allocate read struct");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_read_struct(png, info, nullptr); }
  } guard{&png, &info};
  if (setjmp(png_jmpbuf(png))) throw ParseError(std::string("png: ") + err.message);

  detail::PngReadState state{bytes.data(), bytes.size(), 0};
  png_set_read_fn(png, &state, detail::png_read_from_memory);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  DecodedImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  if (img.channels != 1 && img.channels != 3)
    throw ParseError("png: unsupported channel layout");
  const std::size_t stride = png_get_rowbytes(png, info);
  img.pixels.resize(stride * img.height);
  std::vector<png_bytep> rows(img.height);
  for (int r = 0; r < img.height; ++r) rows[r] = img.pixels.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return img;
}

inline std::vector<std::uint8_t> encode_png(int height, int width, int channels,
                                            const std::vector<std::uint8_t>& pixels) {
  if (channels != 1 && channels != 3) throw ParseError("png: channels must be 1 or 3");
  if (pixels.size() != static_cast<std::size_t>(height) * width * channels)
    throw DimensionMismatch("png: pixel buffer size mismatch");
  detail::PngErrorSlot err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err,
                                            detail::png_error_jump, detail::png_warning_ignore);
  if (!png) throw IoError("png: cannot allocate write struct");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_write_struct(png, info); }
  } guard{&png, &info};
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) throw IoError(std::string("png: ") + err.message);

  png_set_write_fn(png, &out, detail::png_write_to_vector, detail::png_flush_noop);
  png_set_IHDR(png, info, width, height, 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * stride));
  png_write_end(png, nullptr);
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes to a sibling temp file, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::vector<std::uint8_t>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline DecodedImage read_png(const std::filesystem::path& path) {
  try {
    return decode_png(read_file_bytes(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// Grayscale as [0,1] floats; RGB input is averaged.
inline Grid<float> to_gray(const DecodedImage& img) {
  Grid<float> g(img.height, img.width);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (img.channels == 1) {
      g.values[i] = img.pixels[i] / 255.0f;
    } else {
      const int s = img.pixels[3 * i] + img.pixels[3 * i + 1] + img.pixels[3 * i + 2];
      g.values[i] = static_cast<float>(s) / (3.0f * 255.0f);
    }
  }
  return g;
}

inline RgbImage to_rgb(const DecodedImage& img) {
  RgbImage out{img.height, img.width, {}};
  if (img.channels == 3) {
    out.pixels = img.pixels;
  } else {
    out.pixels.resize(3 * img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = img.pixels[i];
  }
  return out;
}

struct StructLoadOptions {
  float threshold = 0.5f;
  // MSD-style renders may draw walls dark on a light background.
  bool walls_dark = false;
};

inline RawBoundary raw_from_image(const DecodedImage& img, const StructLoadOptions& opt = {}) {
  Grid<float> g = to_gray(img);
  if (opt.walls_dark)
    for (float& v : g.values) v = 1.0f - v;
  return threshold_boundary(g, opt.threshold);
}

inline std::vector<std::uint8_t> encode_raw_png(const RawBoundary& raw) {
  std::vector<std::uint8_t> px(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) px[i] = raw.values[i] >= 0.5f ? 255 : 0;
  return encode_png(raw.height, raw.width, 1, px);
}

inline std::vector<std::uint8_t> encode_rgb_png(const RgbImage& img) {
  return encode_png(img.height, img.width, 3, img.pixels);
}

// Label grids are stored as 8-bit grayscale PNG holding the class id.
inline std::vector<std::uint8_t> encode_label_png(const LabelGrid& labels) {
  std::vector<std::uint8_t> px(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int v = labels.values[i];
    if (v < 0 || v > 255) throw ClassOutOfRange("label " + std::to_string(v) + " exceeds 8 bits");
    px[i] = static_cast<std::uint8_t>(v);
  }
  return encode_png(labels.height, labels.width, 1, px);
}

// Full-plan images: grayscale pixels are class ids, RGB pixels are palette
// colors.
inline LabelGrid labels_from_image(const DecodedImage& img, const ClassPalette& palette) {
  if (img.channels == 3) return labels_from_rgb(to_rgb(img), palette);
  LabelGrid out(img.height, img.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int id = img.pixels[i];
    if (!palette.contains(id))
      throw UnknownClassId("indexed label " + std::to_string(id) + " is not in the palette");
    out.values[i] = id;
  }
  return out;
}

// Boundary image file: "FPBI", u32 version, u32 height, u32 width, then the
// three planes as little-endian float32.
inline constexpr std::uint32_t kBoundaryFileVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  put_u32(out, std::bit_cast<std::uint32_t>(f));
}
inline float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace detail

inline std::vector<std::uint8_t> encode_boundary_file(const BoundaryImage& b) {
  std::vector<std::uint8_t> out{'F', 'P', 'B', 'I'};
  detail::put_u32(out, kBoundaryFileVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(b.height));
  detail::put_u32(out, static_cast<std::uint32_t>(b.width));
  out.reserve(out.size() + 4 * b.data.size());
  for (float v : b.data) detail::put_f32(out, v);
  return out;
}

inline BoundaryImage decode_boundary_file(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "FPBI", 4) != 0)
    throw ParseError("boundary file: bad magic");
  if (detail::get_u32(bytes.data() + 4) != kBoundaryFileVersion)
    throw ParseError("boundary file: unsupported version");
  const int h = static_cast<int>(detail::get_u32(bytes.data() + 8));
  const int w = static_cast<int>(detail::get_u32(bytes.data() + 12));
  if (bytes.size() != 16 + 12ull * static_cast<std::uint32_t>(h) * static_cast<std::uint32_t>(w))
    throw ParseError("boundary file: size mismatch");
  BoundaryImage b(h, w);
  for (std::size_t i = 0; i < b.data.size(); ++i)
    b.data[i] = detail::get_f32(bytes.data() + 16 + 4 * i);
  return b;
}

}  // namespace floorplan
