#include "stylesplat/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numbers>

namespace stylesplat {

namespace fs = std::filesystem;

namespace {

bool g_logging = false;

bool compatible(const json& def, const json& value) {
  if (def.is_number_float()) return value.is_number();
  if (def.is_number_integer()) return value.is_number_integer();
  return def.type() == value.type();
}

// Re-throws module errors with the failing stage prefixed, keeping the error kind.
template <typename F>
auto in_stage(const char* name, F&& f) {
  const auto prefix = [name](const std::exception& e) { return std::string(name) + ": " + e.what(); };
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix(e));
  } catch (const ValidationError& e) {
    throw ValidationError(prefix(e));
  } catch (const NumericError& e) {
    throw NumericError(prefix(e));
  } catch (const DegenerateError& e) {
    throw DegenerateError(prefix(e));
  } catch (const IoError& e) {
    throw IoError(prefix(e));
  }
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

json range_json(const RangeSummary& s) {
  return {{"rmse", s.rmse}, {"feature_rmse", s.feature_rmse}, {"pairs", s.pairs}, {"feature_pairs", s.feature_pairs}};
}

std::string ordering(double a, double b, const char* name_a, const char* name_b) {
  if (a < b) return std::string(name_a) + " < " + name_b;
  if (a > b) return std::string(name_a) + " > " + name_b;
  return std::string(name_a) + " = " + name_b;
}

}  // namespace

void set_logging(bool enabled) { g_logging = enabled; }

void log_event(std::string_view event, json fields) {
  if (!g_logging) return;
  json line = {{"event", std::string(event)}};
  for (auto& [k, v] : fields.items()) line[k] = v;
  std::cerr << line.dump() << '\n';
}

RunConfig::RunConfig() : values_(defaults()) {}

const json& RunConfig::defaults() {
  static const json d = {
      {"seed", 7},
      {"workers", 1},
      // scene
      {"scene", ""},
      {"preset", "blocks"},
      {"gaussians", 500},
      {"groups", 4},
      // cameras
      {"camera_file", ""},
      {"cameras", 8},
      {"width", 64},
      {"height", 64},
      {"orbit_radius", 2.5},
      {"orbit_height", 1.0},
      {"fov_y", 50.0},
      // rendering
      {"falloff_cutoff", true},
      {"tile_size", 16},
      // key views and diffusion
      {"key_views", 2},
      {"steps", 50},
      {"beta_start", 1e-4},
      {"beta_end", 0.02},
      {"cvsa_block", "dec2-last"},
      {"denoiser_output_scale", 0.5},
      {"denoiser_style_gain", 8.0},
      {"denoiser_attention_gain", 0.5},
      {"style", "builtin:stripes"},
      // transfer
      {"mode", "ist"},
      {"iters", 300},
      {"lr", 0.01},
      {"optimizer", "adam"},
      {"lambda_style", 1.0},
      {"lambda_content", 0.05},
      {"batch", 1},
      {"feature_stages", 2},
      {"feature_dim", 32},
      // metrics
      {"warp_depth_tolerance", kWarpDepthTolerance},
      {"warp_weight_threshold", kWarpWeightThreshold},
  };
  return d;
}

void RunConfig::merge(const json& overrides) {
  if (!overrides.is_object()) throw ConfigError("config must be a JSON object");
  for (auto& [key, value] : overrides.items()) {
    const auto it = defaults().find(key);
    if (it == defaults().end()) throw ConfigError("unknown config key '" + key + "'");
    if (!compatible(*it, value)) {
      throw ConfigError("config key '" + key + "' expects " + std::string(it->type_name()) + ", got " +
                        value.type_name());
    }
    values_[key] = it->is_number_float() ? json(value.get<double>()) : value;
  }
  if (values_.at("seed").get<std::int64_t>() < 0 && !values_.at("seed").is_number_unsigned()) {
    throw ConfigError("seed must be non-negative");
  }
}

void RunConfig::merge_file(const fs::path& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  merge(j);
}

std::vector<Camera> RunConfig::cameras() const {
  std::vector<Camera> cams;
  const auto file = get<std::string>("camera_file");
  if (!file.empty()) {
    cams = load_cameras(file);
  } else {
    const int n = get<int>("cameras");
    if (n < 1) throw ValidationError("camera count must be positive");
    cams = orbit_cameras(n, get<double>("orbit_radius"), get<double>("orbit_height"), get<double>("fov_y"),
                         get<int>("width"), get<int>("height"));
  }
  for (const auto& c : cams) require_valid(c);
  return cams;
}

GaussianScene RunConfig::scene() const {
  const auto path = get<std::string>("scene");
  GaussianScene s = path.empty() ? make_scene(get<std::string>("preset"), get<int>("gaussians"), get<int>("groups"),
                                              stage_seed("scene"))
                                 : load_scene(path);
  require_valid(s);
  return s;
}

TransferConfig RunConfig::transfer() const {
  TransferConfig t;
  t.iterations = get<int>("iters");
  t.step_size = get<double>("lr");
  t.optimizer = parse_optimizer(get<std::string>("optimizer"));
  t.lambda_style = get<double>("lambda_style");
  t.lambda_content = get<double>("lambda_content");
  t.mode = parse_transfer_mode(get<std::string>("mode"));
  t.batch = get<int>("batch");
  t.seed = stage_seed("transfer");
  t.workers = get<int>("workers");
  t.validate();
  return t;
}

DDIMSchedule RunConfig::schedule() const {
  return make_schedule(get<int>("steps"), get<double>("beta_start"), get<double>("beta_end"));
}

ToyUNet::Config RunConfig::denoiser() const {
  ToyUNet::Config c;
  c.seed = stage_seed("denoiser");
  c.cvsa_block = parse_attention_slot(get<std::string>("cvsa_block"));
  c.output_scale = get<double>("denoiser_output_scale");
  c.style_gain = get<double>("denoiser_style_gain");
  c.attention_gain = get<double>("denoiser_attention_gain");
  return c;
}

FeatureExtractor RunConfig::feature_extractor() const {
  const int stages = get<int>("feature_stages"), dim = get<int>("feature_dim");
  if (stages < 1 || dim < 1) throw ValidationError("feature_stages and feature_dim must be positive");
  return FeatureExtractor(stage_seed("features"), stages, dim);
}

WarpOptions RunConfig::warp() const {
  WarpOptions w;
  w.depth_tolerance = get<double>("warp_depth_tolerance");
  w.weight_threshold = get<double>("warp_weight_threshold");
  if (!(w.depth_tolerance >= 0.0) || !(w.weight_threshold >= 0.0)) {
    throw ValidationError("warp tolerances must be non-negative");
  }
  return w;
}

RenderOptions RunConfig::render_options() const {
  RenderOptions o;
  o.falloff_cutoff = get<bool>("falloff_cutoff");
  o.workers = get<int>("workers");
  o.tile_size = get<int>("tile_size");
  if (o.workers < 1) throw ValidationError("workers must be at least 1");
  if (o.tile_size < 1) throw ValidationError("tile_size must be at least 1");
  return o;
}

Image RunConfig::style_image() const {
  const auto name = get<std::string>("style");
  if (name.starts_with("builtin:")) return builtin_style(name, get<int>("height"), get<int>("width"), stage_seed("style"));
  return read_png(name);
}

Image builtin_style(std::string_view name, int height, int width, std::uint64_t seed) {
  if (name.starts_with("builtin:")) name.remove_prefix(8);
  if (height < 1 || width < 1) throw ValidationError("style image size must be positive");
  Rng rng(seed);
  Vec3 a, b;
  for (int k = 0; k < 3; ++k) a[k] = rng.uniform(0.0, 0.35);
  for (int k = 0; k < 3; ++k) b[k] = rng.uniform(0.65, 1.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  Image img(height, width, 3);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double t;
      if (name == "stripes") {
        t = std::fmod(double(r + c), 8.0) < 4.0 ? 0.0 : 1.0;
      } else if (name == "checker") {
        t = ((r / 4) + (c / 4)) % 2 ? 1.0 : 0.0;
      } else if (name == "waves") {
        t = 0.5 + 0.5 * std::sin(0.6 * c + 1.3 * std::sin(0.25 * r) + phase);
      } else {
        throw ConfigError("unknown builtin style '" + std::string(name) + "'");
      }
      img.pixel(r, c) = ((1.0 - t) * a + t * b).transpose();
    }
  }
  return img;
}

KeyViewStage run_key_view_stage(const RunConfig& config, const GaussianScene& scene,
                                const std::vector<Camera>& cameras, const Image& style) {
  KeyViewStage st;
  st.indices = select_key_views(cameras, config.get<int>("key_views"));
  const RenderOptions opts = config.render_options();
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(scene.n_groups);
  std::vector<Image> colors, depths;
  for (std::size_t i = 0; i < st.indices.size(); ++i) {
    const Camera& cam = cameras[std::size_t(st.indices[i])];
    st.cameras.push_back(cam);
    st.renders.push_back(render(scene, cam, opts));
    st.groups.push_back(classify_identity(st.renders.back().id_features, clf, st.renders.back().coverage,
                                          "key_" + std::to_string(i)));
    colors.push_back(st.renders.back().color);
    depths.push_back(st.renders.back().depth);
  }
  const ToyUNet unet(config.denoiser());
  for (const Image& img : stylize_key_views(colors, depths, style_embedding(style), unet, config.schedule())) {
    st.stylized.push_back(quantize8(img));
  }
  return st;
}

json write_key_views(const KeyViewStage& stage, const RunConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  const DDIMSchedule sch = config.schedule();
  json views = json::array(), cams = json::array();
  for (std::size_t i = 0; i < stage.stylized.size(); ++i) {
    const std::string name = "view_" + std::to_string(i) + ".png";
    write_png(stage.stylized[i], dir / name);
    views.push_back(name);
    cams.push_back(to_json(stage.cameras[i]));
  }
  const json manifest = {
      {"schedule", {{"steps", sch.steps}, {"beta_start", sch.beta_start}, {"beta_end", sch.beta_end}}},
      {"seed", config.seed()},
      {"denoiser_seed", config.denoiser().seed},
      {"cvsa_block", config.get<std::string>("cvsa_block")},
      {"indices", stage.indices},
      {"views", views},
      {"cameras", cams},
  };
  write_json(manifest, dir / "manifest.json");
  return manifest;
}

std::vector<KeyView> load_key_views(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  if (!m.contains("views") || !m.contains("cameras") || m["views"].size() != m["cameras"].size()) {
    throw ValidationError("key view manifest needs matching 'views' and 'cameras' arrays");
  }
  std::vector<KeyView> out;
  for (std::size_t i = 0; i < m["views"].size(); ++i) {
    KeyView kv{camera_from_json(m["cameras"][i]), read_png(dir / m["views"][i].get<std::string>())};
    require_valid(kv.camera);
    out.push_back(std::move(kv));
  }
  if (out.empty()) throw ValidationError("key view manifest lists no views");
  return out;
}

void write_render(const RenderOutput& out, const GroupIdentityMap& groups, int k, const fs::path& dir,
                  const std::string& stem) {
  fs::create_directories(dir);
  write_png(out.color, dir / (stem + ".png"));
  write_pfm(out.depth, dir / (stem + "_depth.pfm"));
  write_pfm(out.coverage, dir / (stem + "_coverage.pfm"));
  write_pfm(out.id_features, dir / (stem + "_id.pfm"));
  write_indexed_png(groups.height, groups.width, group_map_bytes(groups), dir / (stem + "_groups.png"));
  write_json({{"k", k}, {"view", stem}, {"height", groups.height}, {"width", groups.width}},
             dir / (stem + "_groups.json"));
}

json hash_directory(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel != "manifest.json") files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) out[f] = sha256_file(dir / f);
  return out;
}

json to_json(const ConsistencyReport& rep) {
  json pairs = json::array();
  for (const auto& p : rep.pairs) {
    pairs.push_back({{"src", p.src},
                     {"dst", p.dst},
                     {"range", p.long_range ? "long" : "short"},
                     {"covisible", p.covisible},
                     {"rmse", p.rmse},
                     {"feature_rmse", p.feature_defined ? json(p.feature_rmse) : json(nullptr)}});
  }
  return {{"short_range", range_json(rep.short_range)}, {"long_range", range_json(rep.long_range)}, {"pairs", pairs}};
}

json metrics_report(const GaussianScene& scene, const std::vector<Camera>& cameras, const Image& style,
                    const GaussianScene* content_scene, const FeatureExtractor& fx, const RenderOptions& opts,
                    const WarpOptions& warp) {
  json rep = to_json(consistency_report(scene, cameras, fx, opts, warp));
  double gram = 0.0, content = 0.0;
  for (const Camera& cam : cameras) {
    const Image img = render(scene, cam, opts).color;
    const Image ref = content_scene ? render(*content_scene, cam, opts).color : img;
    const PerceptualMetrics pm = perceptual_metrics(img, style, ref, fx);
    gram += pm.style_loss;
    content += pm.content_loss;
  }
  rep["gram_style_loss"] = gram / double(cameras.size());
  rep["content_loss"] = content / double(cameras.size());
  return rep;
}

PipelineResult run_pipeline(const RunConfig& config, const fs::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  write_json(config.values(), out_dir / "config.resolved.json");

  const GaussianScene scene = in_stage("gen-scene", [&] { return config.scene(); });
  save_scene(scene, out_dir / "scene.json");
  const std::vector<Camera> cams = in_stage("cameras", [&] { return config.cameras(); });
  save_cameras(cams, out_dir / "cameras.json");
  log_event("scene", {{"gaussians", scene.gaussians.size()}, {"groups", scene.n_groups}, {"cameras", cams.size()}});

  const Image style = quantize8(in_stage("style", [&] { return config.style_image(); }));
  write_png(style, out_dir / "style.png");

  const FeatureExtractor fx = in_stage("features", [&] { return config.feature_extractor(); });
  const RenderOptions ropts = in_stage("render", [&] { return config.render_options(); });
  const KeyViewStage keys = in_stage("stylize-keyviews", [&] { return run_key_view_stage(config, scene, cams, style); });
  write_json({{"indices", keys.indices}}, out_dir / "keyviews.json");
  for (std::size_t i = 0; i < keys.renders.size(); ++i) {
    write_render(keys.renders[i], keys.groups[i], scene.n_groups, out_dir / "keys", "key_" + std::to_string(i));
  }
  write_key_views(keys, config, out_dir / "stylized");
  log_event("keyviews", {{"indices", keys.indices}, {"ms", elapsed_ms(t0)}});

  std::vector<KeyView> key_views;
  for (std::size_t i = 0; i < keys.cameras.size(); ++i) key_views.push_back({keys.cameras[i], keys.stylized[i]});
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(scene.n_groups);
  const TransferConfig tcfg = in_stage("transfer", [&] { return config.transfer(); });
  const int workers = tcfg.workers;

  const TransferResult tr = in_stage("transfer", [&] {
    TransferResult r = optimize_scene(scene, key_views, cams, tcfg, fx, clf);
    require_valid(r.scene);
    return r;
  });
  save_scene(tr.scene, out_dir / "styled_scene.json");
  write_text(trace_csv(tr.trace), out_dir / "trace.csv");
  log_event("transfer", {{"iterations", tr.trace.size()}, {"ms", elapsed_ms(t0)}});

  json report = in_stage("metrics", [&] {
    json rep = metrics_report(tr.scene, cams, style, &scene, fx, ropts, config.warp());
    const double initial = mean_style_loss(scene, key_views, cams, fx, clf, workers);
    const double final_loss = mean_style_loss(tr.scene, key_views, cams, fx, clf, workers);
    rep["ist_loss"] = {{"initial", initial}, {"final", final_loss}, {"ratio", initial > 0 ? final_loss / initial : 0.0}};
    rep["trace"] = {{"iterations", tr.trace.size()},
                    {"first_total", tr.trace.empty() ? 0.0 : tr.trace.front().total},
                    {"last_total", tr.trace.empty() ? 0.0 : tr.trace.back().total},
                    {"decrease", trace_decrease(tr.trace)}};
    const KeyViewConsistency kvc = key_view_consistency(keys.stylized, keys.renders, keys.cameras, keys.groups, fx);
    rep["key_view_consistency"] = {{"warp_rmse", kvc.warp_rmse},
                                   {"instance_feature_distance", kvc.instance_feature_distance},
                                   {"pairs", kvc.pairs}};
    std::vector<Camera> novel;
    for (std::size_t i = 0; i < cams.size(); ++i) {
      if (std::find(keys.indices.begin(), keys.indices.end(), int(i)) == keys.indices.end()) novel.push_back(cams[i]);
    }
    json nv = {{"cameras", novel.size()}};
    if (!novel.empty()) {
      double gram = 0.0;
      for (const Camera& cam : novel) {
        gram += perceptual_metrics(render(tr.scene, cam, ropts).color, style, render(scene, cam, ropts).color, fx)
                    .style_loss;
      }
      nv["gram_style_loss"] = gram / double(novel.size());
      nv["ist_loss"] = mean_style_loss(tr.scene, key_views, novel, fx, clf, workers);
    }
    rep["novel_views"] = nv;
    rep["mode"] = to_string(tcfg.mode);
    rep["cvsa_block"] = config.get<std::string>("cvsa_block");
    return rep;
  });
  write_json(report, out_dir / "report.json");

  json manifest = {{"config_sha256", sha256_hex(config.values().dump())}, {"files", hash_directory(out_dir)}};
  write_json(manifest, out_dir / "manifest.json");
  log_event("pipeline", {{"dir", out_dir.filename().string()}, {"ms", elapsed_ms(t0)}});
  return {out_dir, manifest, report};
}

json run_ablation(const RunConfig& config, const fs::path& out_dir) {
  const std::string cvsa_on = config.get<std::string>("cvsa_block") == "none" ? std::string("dec2-last")
                                                                              : config.get<std::string>("cvsa_block");
  json runs = json::array();
  json by_name = json::object();
  for (const std::string& cvsa : {cvsa_on, std::string("none")}) {
    for (const std::string mode : {"ist", "direct"}) {
      RunConfig c = config;
      c.set("cvsa_block", cvsa);
      c.set("mode", mode);
      const std::string name = std::string(cvsa == "none" ? "cvsa-off" : "cvsa-on") + "_" + mode;
      const PipelineResult r = run_pipeline(c, out_dir / name);
      json entry = {{"name", name},
                    {"cvsa_block", cvsa},
                    {"mode", mode},
                    {"trace_decrease", r.report["trace"]["decrease"]},
                    {"key_view_consistency", r.report["key_view_consistency"]},
                    {"novel_views", r.report["novel_views"]},
                    {"short_range", r.report["short_range"]}};
      runs.push_back(entry);
      by_name[name] = entry;
    }
  }
  const auto kv = [&](const char* name) {
    return by_name[name]["key_view_consistency"]["instance_feature_distance"].get<double>();
  };
  const auto novel = [&](const char* name) { return by_name[name]["novel_views"].value("ist_loss", 0.0); };
  json out = {
      {"runs", runs},
      {"cvsa_comparison",
       {{"metric", "key-view instance feature distance"},
        {"on", kv("cvsa-on_ist")},
        {"off", kv("cvsa-off_ist")},
        {"ordering", ordering(kv("cvsa-on_ist"), kv("cvsa-off_ist"), "on", "off")}}},
      {"ist_vs_direct",
       {{"metric", "novel-view instance style loss"},
        {"ist", novel("cvsa-on_ist")},
        {"direct", novel("cvsa-on_direct")},
        {"ordering", ordering(novel("cvsa-on_ist"), novel("cvsa-on_direct"), "ist", "direct")}}},
  };
  write_json(out, out_dir / "ablation.json");
  return out;
}

}  // namespace stylesplat
