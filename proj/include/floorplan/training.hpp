#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "floorplan/dataset.hpp"
#include "floorplan/errors.hpp"
#include "floorplan/evaluation.hpp"
#include "floorplan/model.hpp"

namespace floorplan {

enum class LossMask { kAllPixels, kInteriorOnly };
enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  int steps = 500;
  int batch_size = 4;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::vector<double> class_weights;  // empty = uniform
  bool inverse_frequency_weights = false;
  LossMask loss_mask = LossMask::kAllPixels;
  LrSchedule schedule = LrSchedule::kConstant;
  std::uint64_t seed = 7;
  int checkpoint_every = 0;  // 0 = only final and best
  int eval_every = 50;
  int resolution = 0;        // 0 = native size of the samples

  bool operator==(const TrainConfig&) const = default;

  void validate(int classes) const {
    if (steps < 0) throw ConfigError("train.steps must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0))
      throw ConfigError("train.learning_rate and train.weight_decay must be >= 0");
    if (checkpoint_every < 0 || eval_every < 0)
      throw ConfigError("train.checkpoint_every and train.eval_every must be >= 0");
    if (!class_weights.empty()) {
      if (static_cast<int>(class_weights.size()) != classes)
        throw ConfigError("train.class_weights needs one weight per class");
      for (double w : class_weights)
        if (!(w > 0.0)) throw ConfigError("train.class_weights must all be > 0");
    }
  }
};

struct AdamCoefficients {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;
};

struct TrainState {
  ModelParams<float> params;
  nn::TensorSet<float> moment1;
  nn::TensorSet<float> moment2;
  std::int64_t step = 0;
  std::optional<double> best_val;
  std::uint64_t seed = 0;
  std::mt19937_64 rng;
  std::vector<std::uint32_t> data_order;  // current epoch's sample order
  std::uint32_t cursor = 0;                // next position in data_order

  bool operator==(const TrainState&) const = default;
};

inline TrainState init_train_state(const ModelConfig& cfg, std::uint64_t seed) {
  TrainState s;
  s.params = init_model<float>(cfg, seed);
  s.moment1 = s.params.tensors.zeros_like();
  s.moment2 = s.params.tensors.zeros_like();
  s.seed = seed;
  s.rng.seed(seed);
  return s;
}

// Grid of per-pixel loss weights: 1 = scored, 0 = ignored.
inline Grid<std::uint8_t> loss_mask_for(const BoundaryImage& b, LossMask mode) {
  Grid<std::uint8_t> m(b.height, b.width, 1);
  if (mode == LossMask::kInteriorOnly) {
    const auto inside = b.channel(BoundaryImage::kInOut);
    for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = inside[i] > 0.5f ? 1 : 0;
  }
  return m;
}

// Sum over one sample's unmasked pixels of w[t] * -log softmax(logits)[t],
// divided by `normalizer`. When `grad` is given it receives d(result)/dlogits.
template <typename T>
double cross_entropy_sum(const nn::FeatureMap<T>& logits, const LabelGrid& target,
                         const std::vector<double>& weights, const Grid<std::uint8_t>& mask,
                         double normalizer, nn::FeatureMap<T>* grad) {
  const int c_count = logits.channels;
  const std::size_t hw = logits.plane();
  if (!target.same_dims(logits.height, logits.width) ||
      !mask.same_dims(logits.height, logits.width))
    throw DimensionMismatch("logits, target and mask must share spatial size");
  if (grad) *grad = nn::FeatureMap<T>(c_count, logits.height, logits.width);
  double total = 0.0;
  std::vector<double> z(c_count);
  for (std::size_t i = 0; i < hw; ++i) {
    if (!mask.values[i]) continue;
    const int t = target.values[i];
    if (t < 0 || t >= c_count) throw ClassOutOfRange("target class " + std::to_string(t));
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < c_count; ++c) {
      z[c] = static_cast<double>(logits.data[c * hw + i]);
      mx = std::max(mx, z[c]);
    }
    double sum = 0.0;
    for (int c = 0; c < c_count; ++c) sum += std::exp(z[c] - mx);
    const double lse = mx + std::log(sum);
    const double w = weights.empty() ? 1.0 : weights[t];
    total += w * (lse - z[t]);
    if (grad) {
      const double scale = w / normalizer;
      for (int c = 0; c < c_count; ++c) {
        const double p = std::exp(z[c] - lse);
        grad->data[c * hw + i] = static_cast<T>(scale * (p - (c == t ? 1.0 : 0.0)));
      }
    }
  }
  return total / normalizer;
}

// Mean over all unmasked pixels of the batch of the weighted negative log
// likelihood.
template <typename T>
double pixel_cross_entropy(const std::vector<nn::FeatureMap<T>>& logits,
                           const std::vector<LabelGrid>& targets,
                           const std::vector<double>& weights,
                           const std::vector<Grid<std::uint8_t>>& masks,
                           std::vector<nn::FeatureMap<T>>* grads = nullptr) {
  std::size_t scored = 0;
  for (const auto& m : masks) scored += std::count(m.values.begin(), m.values.end(), 1);
  if (scored == 0) throw EmptyMaskError("loss mask leaves no pixel to score");
  if (grads) grads->resize(logits.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < logits.size(); ++b)
    loss += cross_entropy_sum(logits[b], targets[b], weights, masks[b],
                              static_cast<double>(scored), grads ? &(*grads)[b] : nullptr);
  return loss;
}

inline double scheduled_lr(const TrainConfig& cfg, std::int64_t step) {
  if (cfg.schedule == LrSchedule::kConstant || cfg.steps == 0) return cfg.learning_rate;
  const double t = std::min(1.0, static_cast<double>(step) / cfg.steps);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// Biases and normalisation parameters are excluded from weight decay.
inline bool decays(const std::string& name) { return is_weight(name); }

struct StepResult {
  double loss = 0.0;
};

// One gradient evaluation over the batch followed by one decoupled-weight-
// decay adaptive-moment update.
inline StepResult train_step(TrainState& state, const BatchTensors<float>& batch,
                             const TrainConfig& cfg) {
  const auto& params = state.params;
  std::vector<Grid<std::uint8_t>> masks;
  std::size_t scored = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    masks.push_back(loss_mask_for(batch.boundaries[b], cfg.loss_mask));
    if (!batch.has_target[b]) masks.back().values.assign(masks.back().size(), 0);
    scored += std::count(masks.back().values.begin(), masks.back().values.end(), 1);
  }
  if (scored == 0) throw EmptyMaskError("batch has no scored pixel");

  auto grads = params.tensors.zeros_like();
  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (!batch.has_target[b]) continue;
    ForwardCache<float> cache;
    const auto logits = forward_logits(params, batch.boundaries[b], batch.graphs[b], &cache);
    nn::FeatureMap<float> dlogits;
    loss += cross_entropy_sum(logits, batch.targets[b], cfg.class_weights, masks[b],
                              static_cast<double>(scored), &dlogits);
    backward(params, batch.graphs[b], cache, dlogits, grads);
  }
  if (!std::isfinite(loss)) {
    std::string culprit = "logits";
    for (const auto& t : params.tensors.all())
      if (std::any_of(t.data.begin(), t.data.end(), [](float v) { return !std::isfinite(v); })) {
        culprit = "parameter " + t.name;
        break;
      }
    throw NonFiniteLossError("loss is not finite at step " + std::to_string(state.step + 1) +
                             "; first non-finite tensor: " + culprit);
  }
  for (const auto& g : grads.all())
    for (float v : g.data)
      if (!std::isfinite(v))
        throw NonFiniteLossError("gradient of tensor " + g.name + " is not finite at step " +
                                 std::to_string(state.step + 1));

  const std::int64_t t = state.step + 1;
  const double lr = scheduled_lr(cfg, state.step);
  const double bc1 = 1.0 - std::pow(AdamCoefficients::kBeta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(AdamCoefficients::kBeta2, static_cast<double>(t));
  const float b1 = static_cast<float>(AdamCoefficients::kBeta1);
  const float b2 = static_cast<float>(AdamCoefficients::kBeta2);
  auto& ps = state.params.tensors.all();
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& p = ps[k].data;
    auto& m = state.moment1.all()[k].data;
    auto& v = state.moment2.all()[k].data;
    const auto& g = grads.all()[k].data;
    const float wd = decays(ps[k].name) ? static_cast<float>(cfg.weight_decay) : 0.0f;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      const double update = mhat / (std::sqrt(vhat) + AdamCoefficients::kEpsilon) + wd * p[i];
      p[i] = static_cast<float>(p[i] - lr * update);
    }
  }
  state.step = t;
  return {loss};
}

// Inverse class frequency over the targets, normalised to mean 1 over the
// classes that occur; absent classes get weight 1.
inline std::vector<double> inverse_frequency_weights(const std::vector<Sample>& samples,
                                                     int classes) {
  std::vector<double> count(classes, 0.0);
  double total = 0.0;
  for (const auto& s : samples)
    if (s.target)
      for (int v : s.target->values) {
        count[v] += 1.0;
        total += 1.0;
      }
  std::vector<double> w(classes, 1.0);
  int present = 0;
  double sum = 0.0;
  for (int c = 0; c < classes; ++c)
    if (count[c] > 0) {
      w[c] = total / (classes * count[c]);
      sum += w[c];
      ++present;
    }
  if (present)
    for (int c = 0; c < classes; ++c)
      if (count[c] > 0) w[c] *= present / sum;
  return w;
}

struct HistoryEntry {
  std::int64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_miou_with_bg;
  std::optional<double> val_miou_without_bg;
  std::optional<double> val_iou_structure;

  bool operator==(const HistoryEntry&) const = default;
};

inline std::string to_jsonl(const HistoryEntry& e) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j{{"step", e.step},
                   {"train_loss", e.train_loss},
                   {"val_miou_with_bg", opt(e.val_miou_with_bg)},
                   {"val_miou_without_bg", opt(e.val_miou_without_bg)},
                   {"val_iou_structure", opt(e.val_iou_structure)}};
  return j.dump();
}

inline std::vector<HistoryEntry> read_history(const std::filesystem::path& path) {
  std::vector<HistoryEntry> out;
  std::ifstream in(path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      auto opt = [&](const char* k) -> std::optional<double> {
        return j.at(k).is_null() ? std::nullopt : std::optional<double>(j.at(k).get<double>());
      };
      out.push_back({j.at("step").get<std::int64_t>(), j.at("train_loss").get<double>(),
                     opt("val_miou_with_bg"), opt("val_miou_without_bg"),
                     opt("val_iou_structure")});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// Next batch of sample indices; a fresh seeded order is drawn at each epoch
// boundary from the state's generator.
inline std::vector<std::size_t> next_batch_indices(TrainState& state, std::size_t n, int batch) {
  std::vector<std::size_t> out;
  for (int b = 0; b < batch; ++b) {
    if (state.cursor >= state.data_order.size()) {
      const auto perm = seeded_permutation(n, state.rng());
      state.data_order.assign(perm.begin(), perm.end());
      state.cursor = 0;
    }
    out.push_back(state.data_order[state.cursor++]);
  }
  return out;
}

}  // namespace floorplan
