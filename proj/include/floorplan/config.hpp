#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "floorplan/dataset.hpp"
#include "floorplan/errors.hpp"
#include "floorplan/evaluation.hpp"
#include "floorplan/model.hpp"
#include "floorplan/palette.hpp"
#include "floorplan/training.hpp"

namespace floorplan {

struct DatasetSection {
  std::string manifest;      // training manifest (JSON lines)
  std::string val_manifest;  // empty = carve val_fraction out of `manifest`
  double val_fraction = 0.0;
  std::uint64_t split_seed = 0;
  float threshold = 0.5f;
  bool walls_dark = false;
  SynthConfig synth{64, 2, 6, 1, 3};
  int synth_count = 16;

  bool operator==(const DatasetSection&) const = default;
};

enum class EvalStub { kNone, kOracle, kBackground };

struct EvalSection {
  Aggregation aggregation = Aggregation::kMicro;
  EvalStub stub = EvalStub::kNone;  // scoring without a model, for pipeline checks
  bool per_sample_csv = true;

  bool operator==(const EvalSection&) const = default;
};

struct ServeSection {
  std::string host = "127.0.0.1";
  int port = 8080;
  int max_concurrent = 2;
  int default_resolution = 64;
  std::string cors_origin = "*";

  bool operator==(const ServeSection&) const = default;
};

struct RunConfig {
  ClassPalette palette = ClassPalette::default_palette();
  DatasetSection dataset;
  ModelConfig model{3, 16, 2, 32, 16, 8, 8};
  TrainConfig train;
  EvalSection eval;
  ServeSection serve;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

namespace detail {

// Reads one config section, rejecting unknown keys and type mismatches with
// "section.key" in the message.
class SectionReader {
 public:
  SectionReader(std::string name, const nlohmann::json& j) : name_(std::move(name)), j_(j) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_[key];
    bool ok;
    if constexpr (std::is_same_v<T, bool>) ok = v.is_boolean();
    else if constexpr (std::is_integral_v<T>)
      ok = v.is_number_integer() && (std::is_signed_v<T> || v.is_number_unsigned());
    else if constexpr (std::is_floating_point_v<T>) ok = v.is_number();
    else if constexpr (std::is_same_v<T, std::string>) ok = v.is_string();
    else ok = true;
    if (!ok) throw ConfigError(name_ + "." + key + " has the wrong type");
    try {
      out = v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }

  template <typename E>
  void read_enum(const std::string& key, E& out, const std::map<std::string, E>& names) {
    std::string s;
    bool present = j_.contains(key);
    read(key, s);
    if (!present) return;
    auto it = names.find(s);
    if (it == names.end()) throw ConfigError(name_ + "." + key + ": unknown value '" + s + "'");
    out = it->second;
  }

  void nested(const std::string& key, const std::function<void(const nlohmann::json&)>& f) {
    seen_.insert(key);
    if (j_.contains(key)) f(j_[key]);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(name_ + ": unknown key '" + key + "'");
  }

 private:
  std::string name_;
  const nlohmann::json& j_;
  std::set<std::string> seen_;
};

template <typename E>
std::string enum_name(E v, const std::map<std::string, E>& names) {
  for (const auto& [k, e] : names)
    if (e == v) return k;
  return "?";
}

inline const std::map<std::string, LossMask>& loss_mask_names() {
  static const std::map<std::string, LossMask> m{{"all", LossMask::kAllPixels},
                                                 {"interior", LossMask::kInteriorOnly}};
  return m;
}
inline const std::map<std::string, LrSchedule>& schedule_names() {
  static const std::map<std::string, LrSchedule> m{{"constant", LrSchedule::kConstant},
                                                   {"cosine", LrSchedule::kCosine}};
  return m;
}
inline const std::map<std::string, Aggregation>& aggregation_names() {
  static const std::map<std::string, Aggregation> m{{"micro", Aggregation::kMicro},
                                                    {"macro", Aggregation::kMacro}};
  return m;
}
inline const std::map<std::string, EvalStub>& stub_names() {
  static const std::map<std::string, EvalStub> m{
      {"none", EvalStub::kNone}, {"oracle", EvalStub::kOracle}, {"background", EvalStub::kBackground}};
  return m;
}

inline nlohmann::json train_to_json(const TrainConfig& t) {
  return {{"steps", t.steps},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"class_weights", t.class_weights},
          {"inverse_frequency_weights", t.inverse_frequency_weights},
          {"loss_mask", enum_name(t.loss_mask, loss_mask_names())},
          {"schedule", enum_name(t.schedule, schedule_names())},
          {"seed", t.seed},
          {"checkpoint_every", t.checkpoint_every},
          {"eval_every", t.eval_every},
          {"resolution", t.resolution}};
}

}  // namespace detail

inline void RunConfig::validate() const {
  model.validate();
  if (model.classes != palette.num_classes())
    throw ConfigError("model.classes (" + std::to_string(model.classes) +
                      ") must equal the palette size (" + std::to_string(palette.num_classes()) +
                      ")");
  train.validate(model.classes);
  if (train.resolution != 0 && (train.resolution < 0 || train.resolution % model.multiple() != 0))
    throw ConfigError("train.resolution must be 0 or a multiple of " +
                      std::to_string(model.multiple()));
  if (dataset.val_fraction < 0.0 || dataset.val_fraction >= 1.0)
    throw ConfigError("dataset.val_fraction must be in [0, 1)");
  if (!(dataset.threshold > 0.0f && dataset.threshold < 1.0f))
    throw ConfigError("dataset.threshold must be in (0, 1)");
  const auto& s = dataset.synth;
  if (s.grid < 16 || s.min_rooms < 1 || s.max_rooms < s.min_rooms || s.wall_px < 1 ||
      s.stages < 0 || s.grid % (1 << s.stages) != 0)
    throw ConfigError("dataset.synth: need grid >= 16 divisible by 2^stages, "
                      "1 <= min_rooms <= max_rooms, wall_px >= 1");
  if (dataset.synth_count < 0) throw ConfigError("dataset.synth_count must be >= 0");
  if (serve.port < 0 || serve.port > 65535) throw ConfigError("serve.port out of range");
  if (serve.max_concurrent < 1) throw ConfigError("serve.max_concurrent must be >= 1");
  if (serve.default_resolution < 32 || serve.default_resolution > 1024 ||
      serve.default_resolution % model.multiple() != 0)
    throw ConfigError("serve.default_resolution must be in [32, 1024] and a multiple of " +
                      std::to_string(model.multiple()));
}

inline nlohmann::json to_json(const RunConfig& c) {
  using detail::enum_name;
  const auto& d = c.dataset;
  return {{"palette", palette_to_json(c.palette)},
          {"dataset",
           {{"manifest", d.manifest},
            {"val_manifest", d.val_manifest},
            {"val_fraction", d.val_fraction},
            {"split_seed", d.split_seed},
            {"threshold", d.threshold},
            {"walls_dark", d.walls_dark},
            {"synth",
             {{"grid", d.synth.grid},
              {"min_rooms", d.synth.min_rooms},
              {"max_rooms", d.synth.max_rooms},
              {"wall_px", d.synth.wall_px},
              {"stages", d.synth.stages},
              {"count", d.synth_count}}}}},
          {"model", to_json(c.model)},
          {"train", detail::train_to_json(c.train)},
          {"eval",
           {{"aggregation", enum_name(c.eval.aggregation, detail::aggregation_names())},
            {"stub", enum_name(c.eval.stub, detail::stub_names())},
            {"per_sample_csv", c.eval.per_sample_csv}}},
          {"serve",
           {{"host", c.serve.host},
            {"port", c.serve.port},
            {"max_concurrent", c.serve.max_concurrent},
            {"default_resolution", c.serve.default_resolution},
            {"cors_origin", c.serve.cors_origin}}}};
}

// Missing sections and keys keep their defaults; the result is validated.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::SectionReader root("config", j);
  root.nested("palette", [&](const nlohmann::json& p) { c.palette = palette_from_json(p); });
  // The model's class count follows the palette unless set explicitly.
  c.model.classes = c.palette.num_classes();
  root.nested("dataset", [&](const nlohmann::json& v) {
    detail::SectionReader r("dataset", v);
    r.read("manifest", c.dataset.manifest);
    r.read("val_manifest", c.dataset.val_manifest);
    r.read("val_fraction", c.dataset.val_fraction);
    r.read("split_seed", c.dataset.split_seed);
    r.read("threshold", c.dataset.threshold);
    r.read("walls_dark", c.dataset.walls_dark);
    r.nested("synth", [&](const nlohmann::json& sv) {
      detail::SectionReader s("dataset.synth", sv);
      s.read("grid", c.dataset.synth.grid);
      s.read("min_rooms", c.dataset.synth.min_rooms);
      s.read("max_rooms", c.dataset.synth.max_rooms);
      s.read("wall_px", c.dataset.synth.wall_px);
      s.read("stages", c.dataset.synth.stages);
      s.read("count", c.dataset.synth_count);
      s.finish();
    });
    r.finish();
  });
  root.nested("model", [&](const nlohmann::json& v) {
    if (!v.is_object()) throw ConfigError("model: expected an object");
    nlohmann::json merged = to_json(c.model);
    for (const auto& [k, x] : v.items()) merged[k] = x;
    c.model = model_config_from_json(merged);
  });
  root.nested("train", [&](const nlohmann::json& v) {
    detail::SectionReader r("train", v);
    auto& t = c.train;
    r.read("steps", t.steps);
    r.read("batch_size", t.batch_size);
    r.read("learning_rate", t.learning_rate);
    r.read("weight_decay", t.weight_decay);
    r.read("class_weights", t.class_weights);
    r.read("inverse_frequency_weights", t.inverse_frequency_weights);
    r.read_enum("loss_mask", t.loss_mask, detail::loss_mask_names());
    r.read_enum("schedule", t.schedule, detail::schedule_names());
    r.read("seed", t.seed);
    r.read("checkpoint_every", t.checkpoint_every);
    r.read("eval_every", t.eval_every);
    r.read("resolution", t.resolution);
    r.finish();
  });
  root.nested("eval", [&](const nlohmann::json& v) {
    detail::SectionReader r("eval", v);
    r.read_enum("aggregation", c.eval.aggregation, detail::aggregation_names());
    r.read_enum("stub", c.eval.stub, detail::stub_names());
    r.read("per_sample_csv", c.eval.per_sample_csv);
    r.finish();
  });
  root.nested("serve", [&](const nlohmann::json& v) {
    detail::SectionReader r("serve", v);
    r.read("host", c.serve.host);
    r.read("port", c.serve.port);
    r.read("max_concurrent", c.serve.max_concurrent);
    r.read("default_resolution", c.serve.default_resolution);
    r.read("cors_origin", c.serve.cors_origin);
    r.finish();
  });
  root.finish();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str(), nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace floorplan
