// floorplan: command-line entry points for the floor-plan generator.
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "floorplan/checkpoint.hpp"
#include "floorplan/config.hpp"
#include "floorplan/dataset.hpp"
#include "floorplan/evaluation.hpp"
#include "floorplan/trainer.hpp"
#include "floorplan/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace floorplan;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // section.key=value
  bool print_config = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> port;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides, "Override a config value, e.g. train.steps=100");
  cmd->add_flag("--print-config", args.print_config, "Print the merged configuration and exit");
}

// File, then --set overrides, then dedicated flags; validated as a whole.
RunConfig resolve_config(const CommonArgs& args) {
  json j = json::object();
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      j = json::parse(ss.str(), nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw ConfigError(args.config_path + ": " + e.what());
    }
  }
  for (const auto& o : args.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + o + "'");
    std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;  // bare strings need no quotes
    }
    std::string pointer = "/" + key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    j[json::json_pointer(pointer)] = value;
  }
  if (args.seed) j["train"]["seed"] = *args.seed;
  if (args.port) j["serve"]["port"] = *args.port;
  return run_config_from_json(j);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

LoadOptions load_options(const RunConfig& cfg) {
  LoadOptions opt;
  opt.struct_image.threshold = cfg.dataset.threshold;
  opt.struct_image.walls_dark = cfg.dataset.walls_dark;
  return opt;
}

std::vector<Sample> load_manifest_samples(const std::string& path, const RunConfig& cfg) {
  if (path.empty()) throw ConfigError("no dataset manifest: set dataset.manifest or pass --manifest");
  return load_samples(read_manifest(path), cfg.palette, load_options(cfg));
}

// ---- preprocess ----------------------------------------------------------

int cmd_preprocess(const RunConfig& cfg, const fs::path& in_dir, const fs::path& out_dir) {
  if (!fs::is_directory(in_dir)) throw ConfigError("input directory " + in_dir.string() + " does not exist");
  std::vector<fs::path> inputs;
  for (const auto& e : fs::directory_iterator(in_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") inputs.push_back(e.path());
  std::sort(inputs.begin(), inputs.end());

  fs::create_directories(out_dir / "boundary");
  std::string manifest, failures;
  int failed = 0;
  for (const auto& path : inputs) {
    const std::string id = path.stem().string();
    try {
      const RawBoundary raw = raw_from_image(read_png(path), load_options(cfg).struct_image);
      const BoundaryImage b = boundary_from_raw(raw);
      if (auto why = check_boundary_invariants(b); !why.empty()) throw DimensionError(why);
      const std::string rel = "boundary/" + id + ".fpbi";
      write_file_atomic(out_dir / rel, encode_boundary_file(b));
      manifest += json{{"id", id}, {"source", path.filename().string()}, {"boundary_path", rel},
                       {"height", b.height}, {"width", b.width}}
                      .dump() +
                  "\n";
    } catch (const Error& e) {
      ++failed;
      failures += json{{"id", id}, {"source", path.filename().string()}, {"code", e.code()},
                       {"message", e.what()}}
                      .dump() +
                  "\n";
    }
  }
  write_text(out_dir / "manifest.jsonl", manifest);
  write_text(out_dir / "failures.jsonl", failures);
  std::cerr << "preprocess: " << inputs.size() - failed << " written, " << failed << " failed\n";
  return failed ? static_cast<int>(ErrorKind::kData) : 0;
}

// ---- synth ---------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, int count, const fs::path& out_dir) {
  if (count < 0) throw ConfigError("--count must be >= 0");
  fs::create_directories(out_dir);
  std::mt19937_64 seeds(cfg.train.seed);
  std::vector<ManifestRecord> records;
  for (int i = 0; i < count; ++i) {
    Sample s = generate_synthetic(seeds(), cfg.dataset.synth, cfg.palette);
    char id[32];
    std::snprintf(id, sizeof id, "synth-%05d", i);
    s.id = id;
    records.push_back(write_sample(out_dir, s, cfg.palette));
  }
  write_manifest(out_dir / "manifest.jsonl", records);

  // Read everything back through the normal loader and re-check it.
  const auto manifest = read_manifest(out_dir / "manifest.jsonl");
  for (const auto& r : manifest.records) {
    const Sample s = load_msd_sample(manifest, r, cfg.palette);
    if (auto why = check_boundary_invariants(s.boundary); !why.empty())
      throw DimensionError("sample " + r.id + ": " + why);
    require_valid(s.graph, cfg.palette);
  }
  std::cerr << "synth: wrote " << count << " samples to " << out_dir.string() << "\n";
  return 0;
}

// ---- train ---------------------------------------------------------------

int cmd_train(RunConfig cfg, const std::string& manifest_override, const std::string& resume,
              const fs::path& out_dir) {
  const std::string manifest = manifest_override.empty() ? cfg.dataset.manifest : manifest_override;
  cfg.dataset.manifest = manifest;
  std::vector<Sample> train, val;
  if (!cfg.dataset.val_manifest.empty()) {
    train = load_manifest_samples(manifest, cfg);
    val = load_manifest_samples(cfg.dataset.val_manifest, cfg);
  } else if (cfg.dataset.val_fraction > 0.0) {
    if (manifest.empty()) throw ConfigError("no dataset manifest");
    const auto [tm, vm] = split_dataset(read_manifest(manifest), 1.0 - cfg.dataset.val_fraction,
                                        cfg.dataset.val_fraction, cfg.dataset.split_seed);
    train = load_samples(tm, cfg.palette, load_options(cfg));
    val = load_samples(vm, cfg.palette, load_options(cfg));
  } else if (!manifest.empty() || cfg.train.steps > 0) {
    train = load_manifest_samples(manifest, cfg);
  }

  TrainState state = resume.empty() ? init_train_state(cfg.model, cfg.train.seed)
                                     : load_checkpoint(resume, &cfg.model);
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", to_json(cfg).dump(2) + "\n");

  TrainLoopOptions opt;
  opt.out_dir = out_dir;
  opt.on_step = [&](std::int64_t step, double loss) {
    if (step % 10 == 0 || step == cfg.train.steps)
      std::cerr << "step " << step << "/" << cfg.train.steps << " loss " << loss << "\n";
  };
  const auto result = train_loop(std::move(state), train, val, cfg.palette, cfg.train, opt);
  json summary{{"steps", result.state.step}, {"checkpoint", (out_dir / "last.ckpt").string()}};
  summary["best_val_miou_with_bg"] =
      result.state.best_val ? json(*result.state.best_val) : json(nullptr);
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---- eval ----------------------------------------------------------------

int cmd_eval(RunConfig cfg, const std::string& manifest_override, const std::string& checkpoint,
             const std::string& stub, const fs::path& out_dir) {
  if (!stub.empty()) {
    json j = to_json(cfg);
    j["eval"]["stub"] = stub;
    cfg = run_config_from_json(j);
  }
  const auto samples = load_manifest_samples(
      manifest_override.empty() ? cfg.dataset.manifest : manifest_override, cfg);
  std::optional<TrainState> state;
  Predictor predictor;
  switch (cfg.eval.stub) {
    case EvalStub::kOracle: predictor = oracle_predictor(); break;
    case EvalStub::kBackground: predictor = constant_predictor(cfg.palette.background_id()); break;
    case EvalStub::kNone:
      if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint (or eval.stub)");
      state = load_checkpoint(checkpoint);
      if (state->params.config.classes != cfg.palette.num_classes())
        throw ConfigError("checkpoint class count does not match the palette");
      predictor = model_predictor(state->params, cfg.palette);
      break;
  }
  const auto report = evaluate_samples(predictor, samples, cfg.palette, cfg.eval.aggregation);
  const json metrics = to_json(report.metrics, cfg.palette);
  if (!out_dir.empty()) {
    write_text(out_dir / "metrics.json", metrics.dump(2) + "\n");
    if (cfg.eval.per_sample_csv) write_text(out_dir / "per_sample.csv", per_sample_csv(report));
  }
  std::cout << metrics.dump() << "\n";
  return 0;
}

// ---- infer / render ------------------------------------------------------

int cmd_infer(const RunConfig& cfg, const std::string& checkpoint, const fs::path& struct_path,
              const fs::path& graph_path, const fs::path& out_dir) {
  const TrainState state = load_checkpoint(checkpoint);
  if (state.params.config.classes != cfg.palette.num_classes())
    throw ConfigError("checkpoint class count does not match the palette");
  const RawBoundary raw = raw_from_image(read_png(struct_path), load_options(cfg).struct_image);
  const BoundaryImage boundary = boundary_from_raw(raw);
  const auto bytes = read_file_bytes(graph_path);
  const auto parsed = graph_from_json(std::string(bytes.begin(), bytes.end()), cfg.palette);
  for (const auto& w : parsed.warnings) std::cerr << "warning: " << w << "\n";
  require_valid(parsed.graph, cfg.palette);

  const LabelGrid labels = predict_native(state.params, boundary, parsed.graph, cfg.palette);
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "labels.png", encode_label_png(labels));
  write_file_atomic(out_dir / "plan.png", encode_rgb_png(render_plan(labels, cfg.palette)));
  std::cout << json{{"labels", (out_dir / "labels.png").string()},
                    {"render", (out_dir / "plan.png").string()},
                    {"height", labels.height},
                    {"width", labels.width}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_render(const RunConfig& cfg, const fs::path& labels_path, const fs::path& out) {
  const DecodedImage img = read_png(labels_path);
  if (img.channels != 1) throw ParseError(labels_path.string() + ": expected a grayscale label image");
  const LabelGrid labels = labels_from_image(img, cfg.palette);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_file_atomic(out, encode_rgb_png(render_plan(labels, cfg.palette)));
  return 0;
}

// ---- serve ---------------------------------------------------------------

httplib::Server* g_server = nullptr;

int cmd_serve(const RunConfig& cfg, const std::string& checkpoint) {
  Service service(cfg.palette, ServiceOptions{cfg.serve.max_concurrent,
                                              cfg.serve.default_resolution, cfg.serve.cors_origin});
  httplib::Server server;
  service.bind(server);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  // Health answers 503 until the model is in place.
  if (!server.bind_to_port(cfg.serve.host, cfg.serve.port))
    throw IoError("cannot listen on " + cfg.serve.host + ":" + std::to_string(cfg.serve.port));
  std::thread listener([&] { server.listen_after_bind(); });
  try {
    service.load_checkpoint(checkpoint);
  } catch (...) {
    server.stop();
    listener.join();
    throw;
  }
  std::cerr << "serving model " << service.model_version() << " on http://" << cfg.serve.host
            << ":" << cfg.serve.port << "\n";
  listener.join();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Floor-plan generation from a boundary and a room graph"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  CommonArgs common;
  std::string in_dir, out, manifest, checkpoint, struct_path, graph_path, labels_path, stub;
  int count = -1;

  auto with_seed = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { common.seed = v; },
                                           "Random seed (train.seed)");
  };

  auto* pre = app.add_subcommand("preprocess", "Struct images -> boundary files + manifest");
  add_common(pre, common);
  pre->add_option("--in", in_dir, "Directory of struct PNGs")->required();
  pre->add_option("--out", out, "Output directory")->required();

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  add_common(synth, common);
  with_seed(synth);
  synth->add_option("--count", count, "Number of samples (default dataset.synth.count)");
  synth->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, common);
  with_seed(train);
  train->add_option("--manifest", manifest, "Training manifest (overrides dataset.manifest)");
  train->add_option("--checkpoint", checkpoint, "Resume from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--out", out, "Run directory for checkpoints and metrics")->required();

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a labelled manifest");
  add_common(eval, common);
  eval->add_option("--manifest", manifest, "Manifest to score (overrides dataset.manifest)");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--stub", stub, "Score a stub instead of a model: oracle | background");
  eval->add_option("--out", out, "Directory for metrics.json and per_sample.csv");

  auto* infer = app.add_subcommand("infer", "Generate one plan");
  add_common(infer, common);
  infer->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--struct", struct_path, "Boundary (struct) PNG")->required()->check(CLI::ExistingFile);
  infer->add_option("--graph", graph_path, "Layout graph JSON")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", out, "Output directory (labels.png, plan.png)")->required();

  auto* render = app.add_subcommand("render", "Colour a label image with the palette");
  add_common(render, common);
  render->add_option("--labels", labels_path, "Grayscale label PNG")->required()->check(CLI::ExistingFile);
  render->add_option("--out", out, "Output PNG")->required();

  auto* serve = app.add_subcommand("serve", "Run the HTTP inference service");
  add_common(serve, common);
  serve->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  serve->add_option_function<int>("--port", [&](int v) { common.port = v; }, "Listen port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kUsage);
  }

  try {
    const RunConfig cfg = resolve_config(common);
    if (common.print_config) {
      std::cout << to_json(cfg).dump(2) << "\n";
      return 0;
    }
    if (*pre) return cmd_preprocess(cfg, in_dir, out);
    if (*synth) return cmd_synth(cfg, count < 0 ? cfg.dataset.synth_count : count, out);
    if (*train) return cmd_train(cfg, manifest, checkpoint, out);
    if (*eval) return cmd_eval(cfg, manifest, checkpoint, stub, out);
    if (*infer) return cmd_infer(cfg, checkpoint, struct_path, graph_path, out);
    if (*render) return cmd_render(cfg, labels_path, out);
    if (*serve) return cmd_serve(cfg, checkpoint);
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const json::exception& e) {
    std::cerr << "error [config_error]: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kUsage);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kData);
  }
  return static_cast<int>(ErrorKind::kUsage);
}
