#pragma once

#include "stylesplat/diff.hpp"
#include "stylesplat/eval.hpp"
#include "stylesplat/io.hpp"
#include "stylesplat/style.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace stylesplat {

/// Line-delimited JSON events on stderr.
void log_event(std::string_view event, json fields = json::object());
void set_logging(bool enabled);

/// Resolved run settings. Every tunable has exactly one key; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  static const json& defaults();

  /// Overlays `overrides` onto the current values. Throws ConfigError on unknown
  /// keys or on a value whose JSON type differs from the default's.
  void merge(const json& overrides);
  void merge_file(const std::filesystem::path& path);

  const json& values() const { return values_; }

  template <typename T>
  T get(const std::string& key) const {
    return values_.at(key).get<T>();
  }
  void set(const std::string& key, json value) { merge(json{{key, std::move(value)}}); }

  std::uint64_t seed() const { return get<std::uint64_t>("seed"); }
  std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(seed(), stage); }

  std::vector<Camera> cameras() const;
  GaussianScene scene() const;
  TransferConfig transfer() const;
  DDIMSchedule schedule() const;
  ToyUNet::Config denoiser() const;
  FeatureExtractor feature_extractor() const;
  WarpOptions warp() const;
  RenderOptions render_options() const;
  Image style_image() const;

 private:
  json values_;
};

/// Procedural style images: "builtin:stripes", "builtin:checker", "builtin:waves".
Image builtin_style(std::string_view name, int height, int width, std::uint64_t seed);

/// Key cameras chosen from `cameras`, their renders and quantized stylizations.
struct KeyViewStage {
  std::vector<int> indices;
  std::vector<Camera> cameras;
  std::vector<RenderOutput> renders;
  std::vector<GroupIdentityMap> groups;
  std::vector<Image> stylized;  // rounded to 8 bits so files and memory agree
};

KeyViewStage run_key_view_stage(const RunConfig& config, const GaussianScene& scene,
                                const std::vector<Camera>& cameras, const Image& style);

/// Writes view_{i}.png and manifest.json (schedule, seed, cvsa_block, key cameras).
json write_key_views(const KeyViewStage& stage, const RunConfig& config, const std::filesystem::path& dir);
std::vector<KeyView> load_key_views(const std::filesystem::path& dir);

/// Writes {stem}.png, {stem}_depth.pfm, {stem}_coverage.pfm, {stem}_id.pfm and the
/// group map as {stem}_groups.png with a JSON sidecar.
void write_render(const RenderOutput& out, const GroupIdentityMap& groups, int k, const std::filesystem::path& dir,
                  const std::string& stem);

/// sha256 of every file under `dir` except manifest.json, keyed by relative path.
json hash_directory(const std::filesystem::path& dir);

struct PipelineResult {
  std::filesystem::path directory;
  json manifest;
  json report;
};

/// Runs scene generation (or loading), key-view selection and rendering, key-view
/// stylization, 3D transfer and metrics, writing every intermediate and a manifest
/// with content hashes into `out_dir`.
PipelineResult run_pipeline(const RunConfig& config, const std::filesystem::path& out_dir);

/// Runs the pipeline for {cvsa on, off} x {ist, direct} and writes ablation.json.
json run_ablation(const RunConfig& config, const std::filesystem::path& out_dir);

/// Metrics block shared by the `metrics` subcommand and the pipeline.
json metrics_report(const GaussianScene& scene, const std::vector<Camera>& cameras, const Image& style,
                    const GaussianScene* content_scene, const FeatureExtractor& fx, const RenderOptions& opts,
                    const WarpOptions& warp);

json to_json(const ConsistencyReport& rep);

}  // namespace stylesplat
