// Acceptance gate. Runs every primary criterion and prints one PASS/FAIL
// line each; exits non-zero if any fails. `acceptance --only NAME` runs a
// single criterion.
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "floorplan/checkpoint.hpp"
#include "floorplan/config.hpp"
#include "floorplan/dataset.hpp"
#include "floorplan/evaluation.hpp"
#include "floorplan/trainer.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/synth_oracle.hpp"

namespace fs = std::filesystem;
using namespace floorplan;
using nlohmann::json;

namespace {

struct Outcome {
  enum Kind { kPass, kFail, kSkip } kind = kFail;
  std::string detail;
};

Outcome pass(std::string d) { return {Outcome::kPass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::kFail, std::move(d)}; }
Outcome check(bool ok, std::string d) { return {ok ? Outcome::kPass : Outcome::kFail, std::move(d)}; }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

const ClassPalette& palette() {
  static const ClassPalette p = ClassPalette::default_palette();
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- preprocessing -------------------------------------------------------

Outcome preprocessing_invariants() {
  const SynthConfig cfg{64, 2, 6, 1, 3};
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Sample s = generate_synthetic(1000 + seed, cfg, palette());
    RawBoundary raw(64, 64);
    const auto ch = s.boundary.channel(BoundaryImage::kRaw);
    std::copy(ch.begin(), ch.end(), raw.values.begin());
    // Through the image path the loader uses.
    const BoundaryImage b = boundary_from_raw(raw_from_image(decode_png(encode_raw_png(raw))));
    for (const BoundaryImage& img : {b, resize_boundary(b, 32, 32), resize_boundary(b, 128, 128)}) {
      const std::size_t n = img.plane_size();
      for (std::size_t i = 0; i < n; ++i) {
        const float v0 = img.data[i], v1 = img.data[n + i], v2 = img.data[2 * n + i];
        if (!(v0 == 0.0f || v0 == 0.5f || v0 == 1.0f) || !(v1 == 0.0f || v1 == 1.0f) ||
            !(v2 == 0.0f || v2 == 1.0f))
          return fail("sample " + std::to_string(seed) + " pixel " + std::to_string(i) +
                      " off its value set");
      }
      if (auto why = check_boundary_invariants(img); !why.empty())
        return fail("sample " + std::to_string(seed) + ": " + why);
    }
    ++checked;
  }
  return pass(std::to_string(checked) + " images, native and resampled, all on {0,0.5,1}/{0,1}/{0,1}");
}

// ---- metrics -------------------------------------------------------------

Outcome metric_oracle() {
  constexpr int kClasses = 5;
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    LabelGrid pred(8, 8), gt(8, 8);
    // Mix uniform draws with sparse ones so absent classes occur.
    const int span = 1 + trial % kClasses;
    for (auto& v : pred.values) v = static_cast<int>(rng() % span);
    for (auto& v : gt.values) v = static_cast<int>(rng() % kClasses);
    ConfusionMatrix cm(kClasses);
    confusion_accumulate(cm, pred, gt);
    const auto iou = iou_per_class(cm);
    for (int c = 0; c < kClasses; ++c) {
      std::vector<int> in_gt, in_pred;
      for (int i = 0; i < 64; ++i) {
        if (gt.values[i] == c) in_gt.push_back(i);
        if (pred.values[i] == c) in_pred.push_back(i);
      }
      std::vector<int> inter, uni;
      std::set_intersection(in_gt.begin(), in_gt.end(), in_pred.begin(), in_pred.end(),
                            std::back_inserter(inter));
      std::set_union(in_gt.begin(), in_gt.end(), in_pred.begin(), in_pred.end(),
                     std::back_inserter(uni));
      std::int64_t row = 0, col = 0;
      for (int k = 0; k < kClasses; ++k) {
        row += cm.at(c, k);
        col += cm.at(k, c);
      }
      const std::int64_t cm_inter = cm.at(c, c), cm_union = row + col - cm.at(c, c);
      if (cm_inter != static_cast<std::int64_t>(inter.size()) ||
          cm_union != static_cast<std::int64_t>(uni.size()))
        return fail("trial " + std::to_string(trial) + " class " + std::to_string(c) +
                    ": counts differ from the set oracle");
      if (uni.empty() ? iou[c].has_value()
                      : (!iou[c] || *iou[c] != static_cast<double>(inter.size()) / uni.size()))
        return fail("trial " + std::to_string(trial) + " class " + std::to_string(c) +
                    ": IoU differs from the set oracle");
    }
  }
  return pass("1000 random 8x8 pairs, C=5: intersection/union counts identical");
}

// ---- model ---------------------------------------------------------------

Outcome gradient_check() {
  const ModelConfig cfg = testing::tiny_config();
  auto params = init_model<double>(cfg, 21);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& t : params.tensors.all())
    if (!is_weight(t.name))
      for (auto& v : t.data) v += u(rng);

  const BoundaryImage boundary = boundary_from_raw(testing::ring(8, 1, 6));
  const auto gi = make_graph_input<double>(testing::path_graph({2, 4}), palette());
  LabelGrid target(8, 8);
  for (std::size_t i = 0; i < target.size(); ++i) target.values[i] = static_cast<int>(i * 5 % 8);
  const Grid<std::uint8_t> mask(8, 8, 1);
  auto objective = [&] {
    return cross_entropy_sum<double>(forward_logits<double>(params, boundary, gi), target, {}, mask,
                                     64.0, nullptr);
  };
  ForwardCache<double> cache;
  const auto logits = forward_logits<double>(params, boundary, gi, &cache);
  nn::FeatureMap<double> dlogits;
  cross_entropy_sum<double>(logits, target, {}, mask, 64.0, &dlogits);
  auto grads = params.tensors.zeros_like();
  backward(params, gi, cache, dlogits, grads);

  const auto errors = testing::finite_difference_check(params.tensors, grads, objective, 1e-5);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& e : errors)
    if (e.relative_error > worst) {
      worst = e.relative_error;
      worst_name = e.name;
    }
  return check(worst <= 1e-3, std::to_string(errors.size()) + " tensors, worst relative error " +
                                  fmt(worst, 3) + " (" + worst_name + ")");
}

BoundaryImage test_boundary(int size) { return boundary_from_raw(testing::ring(size, 2, size - 3)); }

double linf(const nn::FeatureMap<float>& a, const nn::FeatureMap<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, static_cast<double>(std::abs(a.data[i] - b.data[i])));
  return m;
}

Outcome permutation_invariance() {
  const auto params = init_model<float>(testing::small_config(), 17);
  const auto boundary = test_boundary(32);
  std::mt19937_64 rng(99);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const LayoutGraph g = testing::random_graph(rng, palette(), 1, 9);
    const LayoutGraph pg = permute_graph(g, testing::random_permutation(rng, g.size()));
    const auto a = forward_logits<float>(params, boundary, make_graph_input<float>(g, palette()));
    const auto b = forward_logits<float>(params, boundary, make_graph_input<float>(pg, palette()));
    worst = std::max(worst, linf(a, b));
  }
  return check(worst <= 1e-5, "50 graphs, worst L-inf " + fmt(worst, 3));
}

Outcome conditioning_liveness() {
  const auto boundary = test_boundary(32);
  std::mt19937_64 rng(7);
  double weakest = std::numeric_limits<double>::infinity();
  const auto rooms = palette().room_ids();
  for (int t = 0; t < 20; ++t) {
    const auto params = init_model<float>(testing::small_config(), 100 + t);
    LayoutGraph g = testing::random_graph(rng, palette(), 1, 6);
    const auto a = forward_logits<float>(params, boundary, make_graph_input<float>(g, palette()));
    auto& node = g.nodes[rng() % g.nodes.size()];
    int next = node.category;
    while (next == node.category) next = rooms[rng() % rooms.size()];
    node.category = next;
    const auto b = forward_logits<float>(params, boundary, make_graph_input<float>(g, palette()));
    weakest = std::min(weakest, linf(a, b));
  }
  return check(weakest > 1e-6, "20 trials, smallest output change " + fmt(weakest, 3));
}

// ---- training ------------------------------------------------------------

ModelConfig overfit_model() { return RunConfig{}.model; }  // S=3, W0=16

std::vector<Sample> overfit_samples() {
  std::vector<Sample> out;
  for (int i = 0; i < 16; ++i) out.push_back(generate_synthetic(500 + i, SynthConfig{64, 2, 6, 1, 3}, palette()));
  return out;
}

TrainConfig overfit_train() {
  TrainConfig t;
  t.steps = 500;
  t.batch_size = 4;
  t.seed = 7;
  t.eval_every = 50;
  t.checkpoint_every = 250;
  return t;
}

struct OverfitRun {
  fs::path dir;
  double seconds = 0.0;
  TrainState state;
};

OverfitRun run_overfit(const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = overfit_samples();
  auto result = train_loop(init_train_state(overfit_model(), 7), samples, {}, palette(),
                           overfit_train(), {dir, nullptr});
  return {dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
          std::move(result.state)};
}

// Shared between the overfit and determinism criteria.
std::optional<OverfitRun> g_first_run;
testing::TempDir& scratch() {
  static testing::TempDir dir("acceptance");
  return dir;
}

Outcome overfit() {
  g_first_run = run_overfit(scratch().path() / "run_a");
  const auto report = evaluate_samples(model_predictor(g_first_run->state.params, palette()),
                                       overfit_samples(), palette());
  const double acc = report.metrics.pixel_accuracy;
  const double iou = report.metrics.iou_with_bg.value_or(0.0);
  return check(acc >= 0.90 && iou >= 0.75 && g_first_run->seconds <= 600.0,
               "500 steps in " + fmt(g_first_run->seconds, 3) + " s: pixel accuracy " + fmt(acc) +
                   " (>= 0.90), iou_with_bg " + fmt(iou) + " (>= 0.75)");
}

Outcome determinism() {
  if (!g_first_run) g_first_run = run_overfit(scratch().path() / "run_a");
  const fs::path a = g_first_run->dir;
  const OverfitRun second = run_overfit(scratch().path() / "run_b");
  const bool same_history = slurp(a / "metrics.jsonl") == slurp(second.dir / "metrics.jsonl");
  const bool same_final = slurp(a / "last.ckpt") == slurp(second.dir / "last.ckpt");

  // Resume from the step-250 checkpoint in a directory holding the history
  // as it stood at the crash (including lines written after step 250).
  const fs::path c = scratch().path() / "run_c";
  fs::create_directories(c);
  fs::copy_file(a / "metrics.jsonl", c / "metrics.jsonl");
  auto resumed_state = load_checkpoint(a / "step-250.ckpt");
  if (resumed_state.step != 250) return fail("step-250 checkpoint holds step " + std::to_string(resumed_state.step));
  train_loop(std::move(resumed_state), overfit_samples(), {}, palette(), overfit_train(), {c, nullptr});
  const bool resume_history = slurp(a / "metrics.jsonl") == slurp(c / "metrics.jsonl");
  const bool resume_final = slurp(a / "last.ckpt") == slurp(c / "last.ckpt");
  return check(same_history && same_final && resume_history && resume_final,
               std::string("repeat run: history ") + (same_history ? "identical" : "DIFFERS") +
                   ", checkpoint " + (same_final ? "identical" : "DIFFERS") +
                   "; resume at 250: history " + (resume_history ? "identical" : "DIFFERS") +
                   ", checkpoint " + (resume_final ? "identical" : "DIFFERS"));
}

// ---- dataset -------------------------------------------------------------

Outcome generator_graph_consistency() {
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto layout = generate_synthetic_layout(7000 + seed, SynthConfig{64, 2, 6, 1, 3}, palette());
    const LayoutGraph declared = testing::layout_graph_oracle(layout);
    const LayoutGraph extracted = graph_from_plan(*layout.sample.target, palette());
    if (!isomorphic(declared, extracted))
      return fail("seed " + std::to_string(7000 + seed) + ": extracted graph differs from the rectangle layout");
    if (!isomorphic(layout.sample.graph, declared))
      return fail("seed " + std::to_string(7000 + seed) + ": sample graph differs from the rectangle layout");
    ++ok;
  }
  return pass(std::to_string(ok) + " layouts: plan graph isomorphic to the graph built from room rectangles");
}

// ---- CLI -----------------------------------------------------------------

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome end_to_end_cli() {
  const fs::path dir = scratch().path() / "cli";
  fs::create_directories(dir);
  const std::string cli = "'" FLOORPLAN_CLI_PATH "'";
  const std::string in = "cd '" + dir.string() + "' && ";
  const std::vector<std::pair<std::string, std::string>> steps{
      {"synth", "synth --seed 3 --count 8 --out data"},
      {"train", "train --manifest data/manifest.jsonl --set train.steps=50 --set train.eval_every=25 --out run"},
      {"eval", "eval --manifest data/manifest.jsonl --checkpoint run/last.ckpt --out eval"},
      {"infer", "infer --checkpoint run/last.ckpt --struct data/struct/synth-00000.png "
                "--graph data/graph/synth-00000.json --out infer"},
      {"render", "render --labels infer/labels.png --out render.png"}};
  for (const auto& [name, args] : steps) {
    const int code = shell(in + cli + " " + args + " > " + name + ".out 2> " + name + ".err");
    if (code != 0)
      return fail(name + " exited " + std::to_string(code) + ": " + slurp(dir / (name + ".err")));
  }
  json metrics;
  try {
    metrics = json::parse(slurp(dir / "eval/metrics.json"));
  } catch (const std::exception& e) {
    return fail(std::string("metrics report does not parse: ") + e.what());
  }
  for (const char* k : {"iou_with_bg", "iou_without_bg", "iou_structure", "per_class", "pixels"})
    if (!metrics.contains(k)) return fail(std::string("metrics report lacks ") + k);
  const auto labels = labels_from_image(read_png(dir / "infer/labels.png"), palette());
  if (labels_from_rgb(to_rgb(read_png(dir / "render.png")), palette()) != labels)
    return fail("render does not invert to the inferred labels");
  return pass("exit 0 at every step; iou_with_bg " + fmt(metrics["iou_with_bg"].get<double>()));
}

Outcome msd_pipeline() {
  const char* manifest = std::getenv("FLOORPLAN_MSD_MANIFEST");
  if (!manifest || !*manifest)
    return {Outcome::kSkip, "MSD not available locally (set FLOORPLAN_MSD_MANIFEST to run)"};
  const char* config = std::getenv("FLOORPLAN_MSD_CONFIG");
  const fs::path dir = scratch().path() / "msd";
  const std::string cli = "'" FLOORPLAN_CLI_PATH "'";
  const std::string cfg = config && *config ? std::string(" --config '") + config + "'" : "";
  const std::string m = std::string(" --manifest '") + manifest + "'";
  if (shell(cli + " train" + cfg + m + " --out '" + (dir / "run").string() + "'") != 0)
    return fail("training on MSD failed");
  if (shell(cli + " eval" + cfg + m + " --checkpoint '" + (dir / "run/last.ckpt").string() +
            "' --out '" + (dir / "eval").string() + "' > /dev/null") != 0)
    return fail("evaluation on MSD failed");
  const auto j = json::parse(slurp(dir / "eval/metrics.json"));
  return pass("iou_with_bg " + j["iou_with_bg"].dump() + ", iou_without_bg " +
              j["iou_without_bg"].dump() + ", iou_structure " + j["iou_structure"].dump());
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::tuple<std::string, double, std::function<Outcome()>>> criteria{
      {"preprocessing_invariants", 30, preprocessing_invariants},
      {"metric_oracle", 10, metric_oracle},
      {"gradient_check", 60, gradient_check},
      {"graph_permutation_invariance", 60, permutation_invariance},
      {"conditioning_liveness", 30, conditioning_liveness},
      {"overfit_run", 600, overfit},
      {"determinism", 1800, determinism},
      {"generator_graph_consistency", 60, generator_graph_consistency},
      {"end_to_end_cli", 300, end_to_end_cli},
      {"msd_pipeline", 1e9, msd_pipeline},
  };
  std::string only;
  if (argc == 3 && std::string(argv[1]) == "--only") only = argv[2];

  int failures = 0, ran = 0;
  for (const auto& [name, budget, fn] : criteria) {
    if (!only.empty() && name != only) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = fail(std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.kind == Outcome::kPass && secs > budget) {
      o.kind = Outcome::kFail;
      o.detail += "; took " + fmt(secs, 3) + " s, budget " + fmt(budget, 3) + " s";
    }
    const char* tag = o.kind == Outcome::kPass ? "PASS" : o.kind == Outcome::kSkip ? "SKIP" : "FAIL";
    std::printf("[%s] %-30s %8.2fs  %s\n", tag, name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
    failures += o.kind == Outcome::kFail;
  }
  if (ran == 0) {
    std::fprintf(stderr, "no criterion named '%s'\n", only.c_str());
    return 2;
  }
  std::printf("%d criteria, %d failed\n", ran, failures);
  return failures ? 1 : 0;
}
