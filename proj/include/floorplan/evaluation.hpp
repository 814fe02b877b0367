#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "floorplan/dataset.hpp"
#include "floorplan/errors.hpp"
#include "floorplan/geometry.hpp"
#include "floorplan/model.hpp"
#include "floorplan/palette.hpp"

namespace floorplan {

// counts[t * C + p] = pixels with ground truth t predicted as p.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(int c = 0) : classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}

  std::int64_t& at(int t, int p) { return counts[static_cast<std::size_t>(t) * classes + p]; }
  std::int64_t at(int t, int p) const { return counts[static_cast<std::size_t>(t) * classes + p]; }
  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : counts) s += v;
    return s;
  }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.classes != classes) throw DimensionMismatch("confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline void confusion_accumulate(ConfusionMatrix& cm, const LabelGrid& pred, const LabelGrid& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw DimensionMismatch("prediction " + std::to_string(pred.height) + "x" +
                            std::to_string(pred.width) + " vs ground truth " +
                            std::to_string(gt.height) + "x" + std::to_string(gt.width));
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int t = gt.values[i], p = pred.values[i];
    if (t < 0 || t >= cm.classes || p < 0 || p >= cm.classes)
      throw ClassOutOfRange("class pair (" + std::to_string(t) + "," + std::to_string(p) +
                            ") outside [0," + std::to_string(cm.classes) + ")");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) ++cm.at(gt.values[i], pred.values[i]);
}

// nullopt where the class is absent from both prediction and ground truth.
inline std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(cm.classes);
  for (int c = 0; c < cm.classes; ++c) {
    std::int64_t row = 0, col = 0;
    for (int k = 0; k < cm.classes; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::int64_t inter = cm.at(c, c);
    const std::int64_t uni = row + col - inter;
    if (uni > 0) out[c] = static_cast<double>(inter) / static_cast<double>(uni);
  }
  return out;
}

enum class Aggregation { kMicro, kMacro };

inline const char* to_string(Aggregation a) { return a == Aggregation::kMicro ? "micro" : "macro"; }

struct MetricsReport {
  std::vector<std::optional<double>> per_class_iou;
  std::optional<double> iou_with_bg;
  std::optional<double> iou_without_bg;
  std::optional<double> iou_structure;
  double pixel_accuracy = 0.0;
  std::int64_t pixels = 0;
  Aggregation mode = Aggregation::kMicro;
};

namespace detail {

inline std::optional<double> mean_defined(const std::vector<std::optional<double>>& v, int skip) {
  double s = 0.0;
  int n = 0;
  for (int c = 0; c < static_cast<int>(v.size()); ++c)
    if (c != skip && v[c]) {
      s += *v[c];
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / n;
}

}  // namespace detail

inline MetricsReport challenge_metrics(const ConfusionMatrix& cm, const ClassPalette& palette) {
  if (cm.classes != palette.num_classes())
    throw DimensionMismatch("confusion matrix and palette differ in class count");
  MetricsReport r;
  r.pixels = cm.total();
  if (r.pixels == 0) throw NoScoredPixels("no pixels were scored");
  r.per_class_iou = iou_per_class(cm);
  r.iou_with_bg = detail::mean_defined(r.per_class_iou, -1);
  r.iou_without_bg = detail::mean_defined(r.per_class_iou, palette.background_id());
  r.iou_structure = r.per_class_iou[palette.structure_id()];
  std::int64_t diag = 0;
  for (int c = 0; c < cm.classes; ++c) diag += cm.at(c, c);
  r.pixel_accuracy = static_cast<double>(diag) / static_cast<double>(r.pixels);
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r, const ClassPalette& palette) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json per_class = nlohmann::json::object();
  for (int c = 0; c < static_cast<int>(r.per_class_iou.size()); ++c)
    per_class[palette.entry(c).name] = opt(r.per_class_iou[c]);
  return {{"per_class", per_class},
          {"iou_with_bg", opt(r.iou_with_bg)},
          {"iou_without_bg", opt(r.iou_without_bg)},
          {"iou_structure", opt(r.iou_structure)},
          {"pixel_accuracy", r.pixel_accuracy},
          {"pixels", r.pixels},
          {"aggregation", to_string(r.mode)}};
}

struct SampleReport {
  std::string id;
  std::int64_t pixels = 0;
  double pixel_accuracy = 0.0;
  std::optional<double> iou_with_bg;
  std::optional<double> iou_without_bg;
  std::optional<double> iou_structure;
};

struct DatasetReport {
  MetricsReport metrics;
  std::vector<SampleReport> samples;
};

inline std::string per_sample_csv(const DatasetReport& report) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    std::ostringstream os;
    os.precision(6);
    os << *v;
    return os.str();
  };
  std::string out = "id,pixels,pixel_accuracy,iou_with_bg,iou_without_bg,iou_structure\n";
  for (const auto& s : report.samples)
    out += s.id + "," + std::to_string(s.pixels) + "," + cell(s.pixel_accuracy) + "," +
           cell(s.iou_with_bg) + "," + cell(s.iou_without_bg) + "," + cell(s.iou_structure) +
           "\n";
  return out;
}

using Predictor = std::function<LabelGrid(const Sample&)>;

// Micro mode sums one confusion matrix over the dataset; macro mode averages
// per-image values over the images where they are defined.
inline DatasetReport evaluate_samples(const Predictor& predictor, const std::vector<Sample>& samples,
                                      const ClassPalette& palette,
                                      Aggregation mode = Aggregation::kMicro) {
  if (samples.empty()) throw MissingTargetError("nothing to evaluate: empty sample set");
  DatasetReport out;
  ConfusionMatrix total(palette.num_classes());
  std::vector<std::vector<std::optional<double>>> per_image;
  for (const auto& s : samples) {
    if (!s.target) throw MissingTargetError("sample '" + s.id + "' has no ground truth");
    const LabelGrid pred = predictor(s);
    ConfusionMatrix cm(palette.num_classes());
    confusion_accumulate(cm, pred, *s.target);
    total += cm;
    const auto m = challenge_metrics(cm, palette);
    out.samples.push_back(
        {s.id, m.pixels, m.pixel_accuracy, m.iou_with_bg, m.iou_without_bg, m.iou_structure});
    per_image.push_back(m.per_class_iou);
  }
  out.metrics = challenge_metrics(total, palette);
  if (mode == Aggregation::kMacro) {
    auto avg = [](const std::vector<std::optional<double>>& v) -> std::optional<double> {
      double s = 0.0;
      int n = 0;
      for (const auto& x : v)
        if (x) {
          s += *x;
          ++n;
        }
      return n ? std::optional<double>(s / n) : std::nullopt;
    };
    auto& m = out.metrics;
    for (int c = 0; c < palette.num_classes(); ++c) {
      std::vector<std::optional<double>> col;
      for (const auto& img : per_image) col.push_back(img[c]);
      m.per_class_iou[c] = avg(col);
    }
    std::vector<std::optional<double>> wb, wob, st;
    double acc = 0.0;
    for (const auto& s : out.samples) {
      wb.push_back(s.iou_with_bg);
      wob.push_back(s.iou_without_bg);
      st.push_back(s.iou_structure);
      acc += s.pixel_accuracy;
    }
    m.iou_with_bg = avg(wb);
    m.iou_without_bg = avg(wob);
    m.iou_structure = avg(st);
    m.pixel_accuracy = acc / static_cast<double>(out.samples.size());
  }
  out.metrics.mode = mode;
  return out;
}

// Mirror index without repeating the edge sample.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

inline BoundaryImage reflect_pad(const BoundaryImage& b, int h, int w) {
  BoundaryImage out(h, w);
  for (int k = 0; k < BoundaryImage::kChannels; ++k)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        out.at(k, r, c) = b.at(k, reflect_index(r, b.height), reflect_index(c, b.width));
  return out;
}

inline int round_up(int v, int m) { return (v + m - 1) / m * m; }

// Forward + argmax at native resolution: reflect-pad to the model's size
// multiple, then crop the prediction back.
template <typename T>
LabelGrid predict_native(const ModelParams<T>& params, const BoundaryImage& boundary,
                         const LayoutGraph& graph, const ClassPalette& palette) {
  const int m = params.config.multiple();
  const int ph = round_up(boundary.height, m), pw = round_up(boundary.width, m);
  const BoundaryImage padded =
      (ph == boundary.height && pw == boundary.width) ? boundary : reflect_pad(boundary, ph, pw);
  const LabelGrid full = predict(forward<T>(params, padded, graph, palette));
  if (ph == boundary.height && pw == boundary.width) return full;
  LabelGrid out(boundary.height, boundary.width);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c) out.at(r, c) = full.at(r, c);
  return out;
}

template <typename T>
Predictor model_predictor(const ModelParams<T>& params, const ClassPalette& palette) {
  return [&params, &palette](const Sample& s) {
    return predict_native(params, s.boundary, s.graph, palette);
  };
}

inline Predictor oracle_predictor() {
  return [](const Sample& s) { return *s.target; };
}

inline Predictor constant_predictor(int class_id) {
  return [class_id](const Sample& s) {
    return LabelGrid(s.boundary.height, s.boundary.width, class_id);
  };
}

template <typename T>
DatasetReport evaluate_dataset(const ModelParams<T>& params, const DatasetManifest& manifest,
                               const ClassPalette& palette, Aggregation mode = Aggregation::kMicro) {
  return evaluate_samples(model_predictor(params, palette), load_samples(manifest, palette),
                          palette, mode);
}

}  // namespace floorplan
