#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "floorplan/errors.hpp"
#include "floorplan/image_io.hpp"
#include "floorplan/model.hpp"
#include "floorplan/training.hpp"

// Checkpoint container, all integers little-endian:
//   "FPCK" | u32 format version | u32 header length | header JSON
//   | u32 tensor count | tensors | u32 CRC-32 of everything before it
// Each tensor: u16 name length | name | u8 rank | u32 dims[rank] | f32 data.
// Tensor names carry a section prefix: "param/", "adam_m/" or "adam_v/".
namespace floorplan {

inline constexpr std::uint32_t kCheckpointFormat = 1;

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > size_) throw CorruptCheckpointError("checkpoint is truncated");
    const auto* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() { return get_u32(take(4)); }
  std::uint16_t u16() {
    const auto* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint8_t u8() { return *take(1); }
  bool done() const { return pos_ == size_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline void put_tensor(std::vector<std::uint8_t>& out, const std::string& name,
                       const nn::Tensor<float>& t) {
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  out.push_back(static_cast<std::uint8_t>(t.shape.size()));
  for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.data) put_f32(out, v);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const TrainState& s) {
  std::ostringstream rng;
  rng << s.rng;
  nlohmann::json header{
      {"model_version", s.params.version},
      {"model_config", to_json(s.params.config)},
      {"seed", s.seed},
      {"step", s.step},
      {"best_val", s.best_val ? nlohmann::json(*s.best_val) : nlohmann::json(nullptr)},
      {"rng", rng.str()},
      {"data_order", s.data_order},
      {"cursor", s.cursor}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out{'F', 'P', 'C', 'K'};
  detail::put_u32(out, kCheckpointFormat);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const auto& ps = s.params.tensors.all();
  detail::put_u32(out, static_cast<std::uint32_t>(3 * ps.size()));
  for (const auto& t : ps) detail::put_tensor(out, "param/" + t.name, t);
  for (const auto& t : s.moment1.all()) detail::put_tensor(out, "adam_m/" + t.name, t);
  for (const auto& t : s.moment2.all()) detail::put_tensor(out, "adam_v/" + t.name, t);
  const auto crc = crc32(0L, out.data(), static_cast<uInt>(out.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(crc));
  return out;
}

// When `expected` is given, a checkpoint built for a different architecture
// is rejected.
inline TrainState decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                    const ModelConfig* expected = nullptr) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "FPCK", 4) != 0)
    throw CorruptCheckpointError("not a checkpoint (bad magic)");
  const auto stored_crc = detail::get_u32(bytes.data() + bytes.size() - 4);
  if (crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4)) != stored_crc)
    throw CorruptCheckpointError("checkpoint checksum mismatch");
  detail::Reader in(bytes.data() + 4, bytes.size() - 8);
  if (const auto v = in.u32(); v != kCheckpointFormat)
    throw CorruptCheckpointError("unsupported checkpoint format version " + std::to_string(v));
  const auto hlen = in.u32();
  const auto* hp = in.take(hlen);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hp, hp + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("checkpoint header: ") + e.what());
  }

  TrainState s;
  try {
    s.params.version = header.at("model_version").get<std::string>();
    if (s.params.version != kModelVersion)
      throw CorruptCheckpointError("unknown model version '" + s.params.version + "'");
    s.params.config = model_config_from_json(header.at("model_config"));
    s.seed = header.at("seed").get<std::uint64_t>();
    s.step = header.at("step").get<std::int64_t>();
    if (!header.at("best_val").is_null()) s.best_val = header["best_val"].get<double>();
    std::istringstream rng(header.at("rng").get<std::string>());
    rng >> s.rng;
    if (!rng) throw CorruptCheckpointError("checkpoint RNG state is unreadable");
    s.data_order = header.at("data_order").get<std::vector<std::uint32_t>>();
    s.cursor = header.at("cursor").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptCheckpointError(std::string("checkpoint model config: ") + e.what());
  }
  if (expected && !(*expected == s.params.config))
    throw CorruptCheckpointError(
        "checkpoint shape mismatch: it was built for a different model config");

  s.params.tensors = parameter_layout<float>(s.params.config);
  s.moment1 = s.params.tensors.zeros_like();
  s.moment2 = s.params.tensors.zeros_like();
  const std::size_t per = s.params.tensors.size();
  if (in.u32() != 3 * per)
    throw CorruptCheckpointError("checkpoint tensor count does not match the model config");
  for (std::size_t i = 0; i < 3 * per; ++i) {
    const std::size_t len = in.u16();
    const auto* np = in.take(len);
    const std::string name(reinterpret_cast<const char*>(np), len);
    auto& set = i < per ? s.params.tensors : (i < 2 * per ? s.moment1 : s.moment2);
    const std::string prefix = i < per ? "param/" : (i < 2 * per ? "adam_m/" : "adam_v/");
    auto& t = set.all()[i % per];
    if (name != prefix + t.name)
      throw CorruptCheckpointError("checkpoint shape mismatch: expected tensor " + prefix + t.name +
                                   ", found " + name);
    const int rank = in.u8();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(in.u32());
    if (shape != t.shape)
      throw CorruptCheckpointError("checkpoint shape mismatch for tensor " + name);
    const auto* dp = in.take(4 * t.data.size());
    for (std::size_t k = 0; k < t.data.size(); ++k) t.data[k] = detail::get_f32(dp + 4 * k);
  }
  if (!in.done()) throw CorruptCheckpointError("trailing bytes in checkpoint");
  check_params(s.params);
  return s;
}

inline void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(s));
}

inline TrainState load_checkpoint(const std::filesystem::path& path,
                                  const ModelConfig* expected = nullptr) {
  try {
    return decode_checkpoint(read_file_bytes(path), expected);
  } catch (const CorruptCheckpointError& e) {
    throw CorruptCheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace floorplan
