#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "floorplan/checkpoint.hpp"
#include "floorplan/dataset.hpp"
#include "floorplan/evaluation.hpp"
#include "floorplan/training.hpp"

namespace floorplan {

struct TrainLoopOptions {
  std::filesystem::path out_dir;  // empty = keep everything in memory
  // Called after every step; useful for progress output.
  std::function<void(std::int64_t step, double loss)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<HistoryEntry> history;
};

namespace detail {

inline void rewrite_history(const std::filesystem::path& path,
                            const std::vector<HistoryEntry>& history) {
  std::string text;
  for (const auto& e : history) text += to_jsonl(e) + "\n";
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline void append_history(const std::filesystem::path& path, const HistoryEntry& e) {
  std::ofstream out(path, std::ios::app);
  out << to_jsonl(e) << "\n";
  if (!out) throw IoError("cannot append to " + path.string());
}

}  // namespace detail

// Trains `state` until cfg.steps. Validation runs on `val` every eval_every
// steps (falling back to the training set when `val` is empty). With an
// out_dir, checkpoints go to last.ckpt / best.ckpt / step-N.ckpt and the
// history to metrics.jsonl; a resumed state truncates the history to its
// step so that resumed and uninterrupted runs write the same file.
inline TrainResult train_loop(TrainState state, const std::vector<Sample>& train,
                              const std::vector<Sample>& val, const ClassPalette& palette,
                              TrainConfig cfg, const TrainLoopOptions& opt = {}) {
  cfg.validate(state.params.config.classes);
  if (palette.num_classes() != state.params.config.classes)
    throw ConfigError("palette and model disagree on the class count");
  if (train.empty() && cfg.steps > state.step)
    throw ConfigError("training set is empty");
  if (cfg.inverse_frequency_weights && cfg.class_weights.empty())
    cfg.class_weights = inverse_frequency_weights(train, palette.num_classes());

  const int multiple = state.params.config.multiple();
  int height = cfg.resolution, width = cfg.resolution;
  if (cfg.resolution == 0 && !train.empty()) {
    height = train.front().boundary.height;
    width = train.front().boundary.width;
    for (const auto& s : train)
      if (s.boundary.height != height || s.boundary.width != width)
        throw DimensionError("samples differ in size; set train.resolution");
  }

  TrainResult result;
  const bool persist = !opt.out_dir.empty();
  std::filesystem::path history_path;
  if (persist) {
    std::filesystem::create_directories(opt.out_dir);
    history_path = opt.out_dir / "metrics.jsonl";
    if (state.step > 0 && std::filesystem::exists(history_path)) {
      for (auto& e : read_history(history_path))
        if (e.step <= state.step) result.history.push_back(e);
    }
    detail::rewrite_history(history_path, result.history);
  }

  const auto& eval_set = val.empty() ? train : val;
  while (state.step < cfg.steps) {
    const auto idx = next_batch_indices(state, train.size(), cfg.batch_size);
    std::vector<const Sample*> picked;
    for (auto i : idx) picked.push_back(&train[i]);
    const auto batch = pack_batch<float>(picked, height, width, palette, multiple);
    const auto step = train_step(state, batch, cfg);
    if (opt.on_step) opt.on_step(state.step, step.loss);

    const bool eval_now = cfg.eval_every > 0 &&
                          (state.step % cfg.eval_every == 0 || state.step == cfg.steps);
    if (eval_now) {
      HistoryEntry e{state.step, step.loss, std::nullopt, std::nullopt, std::nullopt};
      const auto report =
          evaluate_samples(model_predictor(state.params, palette), eval_set, palette);
      e.val_miou_with_bg = report.metrics.iou_with_bg;
      e.val_miou_without_bg = report.metrics.iou_without_bg;
      e.val_iou_structure = report.metrics.iou_structure;
      result.history.push_back(e);
      if (persist) detail::append_history(history_path, e);
      const double score = e.val_miou_with_bg.value_or(0.0);
      if (!state.best_val || score > *state.best_val) {
        state.best_val = score;
        if (persist) save_checkpoint(state, opt.out_dir / "best.ckpt");
      }
    }
    if (persist && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0)
      save_checkpoint(state, opt.out_dir / ("step-" + std::to_string(state.step) + ".ckpt"));
  }
  if (persist) save_checkpoint(state, opt.out_dir / "last.ckpt");
  result.state = std::move(state);
  return result;
}

}  // namespace floorplan
