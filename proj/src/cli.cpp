#include "stylesplat/cli.hpp"

#include "stylesplat/pipeline.hpp"
#include "stylesplat/selftest.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <map>
#include <optional>

namespace stylesplat {

namespace fs = std::filesystem;

namespace {

// Flag values are collected as text and converted with the type of the key's default.
struct FlagBindings {
  std::map<std::string, std::string> raw;

  void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option(flag, raw[key], help);
  }

  void apply(RunConfig& cfg) const {
    json overrides = json::object();
    for (const auto& [key, text] : raw) {
      if (text.empty()) continue;
      const json& def = RunConfig::defaults().at(key);
      try {
        std::size_t used = 0;
        if (def.is_number_float()) {
          overrides[key] = std::stod(text, &used);
        } else if (def.is_number_integer()) {
          overrides[key] = std::stoll(text, &used);
        } else if (def.is_boolean()) {
          if (text != "true" && text != "false") throw std::invalid_argument(text);
          overrides[key] = text == "true";
          used = text.size();
        } else {
          overrides[key] = text;
          used = text.size();
        }
        if (used != text.size()) throw std::invalid_argument(text);
      } catch (const std::logic_error&) {
        throw ConfigError("invalid value '" + text + "' for " + key);
      }
    }
    cfg.merge(overrides);
  }
};

fs::path config_path_for(const fs::path& out_file) {
  return out_file.parent_path() / (out_file.stem().string() + ".config.json");
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

int run_gen_scene(const RunConfig& cfg, const fs::path& out) {
  const GaussianScene scene = cfg.scene();
  ensure_parent(out);
  save_scene(scene, out);
  write_json(cfg.values(), config_path_for(out));
  log_event("gen-scene", {{"gaussians", scene.gaussians.size()}, {"groups", scene.n_groups}});
  return kExitOk;
}

int run_render(const RunConfig& cfg, const fs::path& out) {
  const GaussianScene scene = cfg.scene();
  const std::vector<Camera> cams = cfg.cameras();
  const RenderOptions opts = cfg.render_options();
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(scene.n_groups);
  fs::create_directories(out);
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const RenderOutput r = render(scene, cams[i], opts);
    const std::string stem = "view_" + std::to_string(i);
    write_render(r, classify_identity(r.id_features, clf, r.coverage, stem), scene.n_groups, out, stem);
  }
  write_json(cfg.values(), out / "config.resolved.json");
  log_event("render", {{"views", cams.size()}});
  return kExitOk;
}

int run_select(const RunConfig& cfg, const fs::path& out) {
  const std::vector<Camera> cams = cfg.cameras();
  const std::vector<int> keys = select_key_views(cams, cfg.get<int>("key_views"));
  ensure_parent(out);
  write_json({{"indices", keys}}, out);
  write_json(cfg.values(), config_path_for(out));
  log_event("select-keyviews", {{"indices", keys}});
  return kExitOk;
}

int run_stylize(const RunConfig& cfg, const fs::path& out) {
  const GaussianScene scene = cfg.scene();
  const std::vector<Camera> cams = cfg.cameras();
  const KeyViewStage stage = run_key_view_stage(cfg, scene, cams, quantize8(cfg.style_image()));
  write_key_views(stage, cfg, out);
  write_json(cfg.values(), out / "config.resolved.json");
  log_event("stylize-keyviews", {{"indices", stage.indices}});
  return kExitOk;
}

int run_transfer(const RunConfig& cfg, const fs::path& keyviews, const fs::path& out, const fs::path& trace) {
  const TransferConfig tcfg = cfg.transfer();  // reject bad settings before touching files
  const GaussianScene scene = cfg.scene();
  const std::vector<KeyView> keys = load_key_views(keyviews);
  const std::vector<Camera> cams = cfg.cameras();
  const TransferResult r = optimize_scene(scene, keys, cams, tcfg, cfg.feature_extractor(),
                                          IdentityClassifier::identity_embedding(scene.n_groups));
  require_valid(r.scene);
  ensure_parent(out);
  save_scene(r.scene, out);
  if (!trace.empty()) {
    ensure_parent(trace);
    write_text(trace_csv(r.trace), trace);
  }
  write_json(cfg.values(), config_path_for(out));
  log_event("transfer", {{"iterations", r.trace.size()}, {"decrease", trace_decrease(r.trace)}});
  return kExitOk;
}

int run_metrics(const RunConfig& cfg, const std::string& content, const fs::path& out) {
  const GaussianScene scene = cfg.scene();
  const std::vector<Camera> cams = cfg.cameras();
  std::optional<GaussianScene> content_scene;
  if (!content.empty()) content_scene = load_scene(content);
  const json rep = metrics_report(scene, cams, quantize8(cfg.style_image()), content_scene ? &*content_scene : nullptr,
                                  cfg.feature_extractor(), cfg.render_options(), cfg.warp());
  ensure_parent(out);
  write_json(rep, out);
  write_json(cfg.values(), config_path_for(out));
  log_event("metrics", {{"short_range_rmse", rep["short_range"]["rmse"]}});
  return kExitOk;
}

int run_selftest_command(const RunConfig& cfg, const fs::path& scratch) {
  fs::create_directories(scratch);
  bool all = true;
  for (const auto& r : check::run_selftest(scratch, cfg.get<int>("workers"))) {
    all = all && r.passed;
    std::cout << json{{"check", r.name}, {"passed", r.passed}, {"detail", r.detail}}.dump() << '\n';
  }
  return all ? kExitOk : kExitFailure;
}

int run_pipeline_command(const RunConfig& cfg, const fs::path& out, bool ablation) {
  if (ablation) {
    const json rep = run_ablation(cfg, out);
    std::cout << rep.dump(2) << '\n';
  } else {
    const PipelineResult r = run_pipeline(cfg, out);
    std::cout << r.report.dump(2) << '\n';
  }
  return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Instance-aware style transfer for Gaussian splatting scenes", "stylesplat"};
  app.require_subcommand(1);
  app.fallthrough();

  FlagBindings flags;
  std::string config_file;
  bool quiet = false;
  flags.bind(&app, "--workers", "workers", "Worker threads (1 reproduces reference outputs)");
  flags.bind(&app, "--seed", "seed", "Root seed");
  app.add_option("--config", config_file, "JSON config file");
  app.add_flag("--quiet", quiet, "Suppress log events");

  std::string out, keyviews, trace, content, scratch = "selftest_out";
  bool ablation = false;

  auto* gen = app.add_subcommand("gen-scene", "Generate a synthetic scene");
  flags.bind(gen, "--preset", "preset", "blocks | plane | orbit-clutter");
  flags.bind(gen, "--gaussians", "gaussians", "Number of Gaussians");
  flags.bind(gen, "--groups", "groups", "Number of identity groups");
  gen->add_option("--out", out, "Scene JSON path")->required();

  auto add_scene_and_cameras = [&](CLI::App* sub, bool scene_required) {
    auto* opt = sub->add_option("--scene", flags.raw["scene"], "Scene JSON");
    if (scene_required) opt->required();
    flags.bind(sub, "--cameras", "camera_file", "Camera JSON (default: orbit from config)");
  };

  auto* rend = app.add_subcommand("render", "Render color, depth, coverage, identity features and group maps");
  add_scene_and_cameras(rend, true);
  rend->add_option("--out", out, "Output directory")->required();

  auto* sel = app.add_subcommand("select-keyviews", "Farthest-point key view selection");
  flags.bind(sel, "--cameras", "camera_file", "Camera JSON (default: orbit from config)");
  flags.bind(sel, "--views,-k", "key_views", "Number of key views");
  sel->add_option("--out", out, "Output JSON")->required();

  auto* sty = app.add_subcommand("stylize-keyviews", "Render and stylize key views");
  add_scene_and_cameras(sty, true);
  flags.bind(sty, "--style", "style", "Style PNG or builtin:stripes|checker|waves");
  flags.bind(sty, "--views", "key_views", "Number of key views");
  flags.bind(sty, "--steps", "steps", "DDIM steps T");
  flags.bind(sty, "--cvsa-block", "cvsa_block", "none | enc1 | enc2 | mid | dec1 | dec2-last");
  sty->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("transfer", "Optimize scene colors against stylized key views");
  add_scene_and_cameras(tr, true);
  tr->add_option("--keyviews", keyviews, "Directory written by stylize-keyviews")->required();
  flags.bind(tr, "--mode", "mode", "ist | direct");
  flags.bind(tr, "--iters", "iters", "Iterations");
  flags.bind(tr, "--lr", "lr", "Step size");
  flags.bind(tr, "--optimizer", "optimizer", "adam | sgd");
  flags.bind(tr, "--lambda-style", "lambda_style", "Style loss weight");
  flags.bind(tr, "--lambda-content", "lambda_content", "Content loss weight");
  flags.bind(tr, "--batch", "batch", "Cameras per iteration");
  tr->add_option("--out", out, "Styled scene JSON")->required();
  tr->add_option("--trace", trace, "Loss trace CSV");

  auto* met = app.add_subcommand("metrics", "Consistency and perceptual metrics");
  add_scene_and_cameras(met, true);
  flags.bind(met, "--style", "style", "Style PNG or builtin name");
  met->add_option("--content", content, "Content reference scene (default: the scene itself)");
  met->add_option("--out", out, "Report JSON")->required();

  auto* st = app.add_subcommand("selftest", "Run the oracle and invariant suite");
  st->add_option("--scratch", scratch, "Directory for pipeline outputs");

  auto* pipe = app.add_subcommand("pipeline", "Run every stage and write a manifest");
  add_scene_and_cameras(pipe, false);
  flags.bind(pipe, "--style", "style", "Style PNG or builtin name");
  flags.bind(pipe, "--mode", "mode", "ist | direct");
  flags.bind(pipe, "--cvsa-block", "cvsa_block", "Attention slot for cross-view alignment");
  flags.bind(pipe, "--iters", "iters", "Transfer iterations");
  pipe->add_option("--out", out, "Output directory")->required();
  pipe->add_flag("--ablation", ablation, "Run {cvsa on, off} x {ist, direct}");

  std::vector<const char*> argv{"stylesplat"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    set_logging(!quiet);
    RunConfig cfg;
    if (!config_file.empty()) cfg.merge_file(config_file);
    flags.apply(cfg);

    if (gen->parsed()) return run_gen_scene(cfg, out);
    if (rend->parsed()) return run_render(cfg, out);
    if (sel->parsed()) return run_select(cfg, out);
    if (sty->parsed()) return run_stylize(cfg, out);
    if (tr->parsed()) return run_transfer(cfg, keyviews, out, trace);
    if (met->parsed()) return run_metrics(cfg, content, out);
    if (st->parsed()) return run_selftest_command(cfg, scratch);
    if (pipe->parsed()) return run_pipeline_command(cfg, out, ablation);
    return kExitUsage;
  } catch (const ConfigError& e) {
    log_event("error", {{"kind", "config"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    log_event("error", {{"kind", "io"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ValidationError& e) {
    log_event("error", {{"kind", "validation"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const DegenerateError& e) {
    log_event("error", {{"kind", "degenerate"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const NumericError& e) {
    log_event("error", {{"kind", "numeric"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    log_event("error", {{"kind", "internal"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace stylesplat
