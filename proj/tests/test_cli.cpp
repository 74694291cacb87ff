#include "doctest.h"

#include "stylesplat/cli.hpp"
#include "stylesplat/pipeline.hpp"

#include <filesystem>

using namespace stylesplat;
namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("stylesplat_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& leaf) const { return (dir / leaf).string(); }
};

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "--quiet");
  return dispatch(args);
}

}  // namespace

TEST_CASE("gen-scene writes the scene and its resolved config") {
  Scratch s("gen");
  CHECK(run({"gen-scene", "--preset", "blocks", "--gaussians", "500", "--groups", "4", "--seed", "7", "--out",
             s / "s.json"}) == kExitOk);
  const GaussianScene scene = load_scene(s / "s.json");
  CHECK(scene.gaussians.size() == 500);
  CHECK(scene.n_groups == 4);
  CHECK(to_json(scene) == to_json(make_scene("blocks", 500, 4, derive_seed(7, "scene"))));
  const json cfg = read_json(s / "s.config.json");
  CHECK(cfg.at("gaussians") == 500);
  CHECK(cfg.at("seed") == 7);
}

TEST_CASE("exit codes") {
  Scratch s("codes");
  CHECK(run({"render", "--scene", s / "missing.json", "--out", s / "r"}) == kExitUsage);
  CHECK(run({"transfer", "--iters", "-1", "--scene", s / "x.json", "--keyviews", s / "k", "--out", s / "o.json"}) ==
        kExitInvalid);
  CHECK(run({"no-such-command"}) == kExitUsage);
  CHECK(run({"gen-scene", "--preset", "teapot", "--out", s / "t.json"}) == kExitUsage);
  CHECK(run({"gen-scene", "--gaussians", "many", "--out", s / "t.json"}) == kExitUsage);
  CHECK(run({"gen-scene", "--gaussians", "0", "--out", s / "t.json"}) == kExitInvalid);
  CHECK(run({"gen-scene"}) == kExitUsage);  // --out is required

  write_json({{"not_a_key", 1}}, s / "bad.json");
  CHECK(run({"--config", s / "bad.json", "gen-scene", "--out", s / "t.json"}) == kExitUsage);
  write_json({{"gaussians", "ten"}}, s / "typed.json");
  CHECK(run({"--config", s / "typed.json", "gen-scene", "--out", s / "t.json"}) == kExitUsage);
}

TEST_CASE("flags override the config file") {
  Scratch s("merge");
  write_json({{"gaussians", 30}, {"groups", 3}}, s / "c.json");
  REQUIRE(run({"--config", s / "c.json", "gen-scene", "--groups", "2", "--out", s / "s.json"}) == kExitOk);
  const GaussianScene scene = load_scene(s / "s.json");
  CHECK(scene.gaussians.size() == 30);
  CHECK(scene.n_groups == 2);
}

TEST_CASE("render and select-keyviews") {
  Scratch s("render");
  write_json({{"width", 16}, {"height", 16}, {"cameras", 4}}, s / "c.json");
  REQUIRE(run({"--config", s / "c.json", "gen-scene", "--gaussians", "60", "--out", s / "s.json"}) == kExitOk);
  REQUIRE(run({"--config", s / "c.json", "render", "--scene", s / "s.json", "--out", s / "r"}) == kExitOk);
  for (const char* leaf : {"view_0.png", "view_3_depth.pfm", "view_1_coverage.pfm", "view_2_id.pfm",
                           "view_0_groups.png", "view_0_groups.json", "config.resolved.json"}) {
    CHECK(fs::exists(s.dir / "r" / leaf));
  }
  const Image png = read_png(s / "r/view_0.png");
  CHECK(png.height() == 16);

  REQUIRE(run({"--config", s / "c.json", "select-keyviews", "-k", "2", "--out", s / "k.json"}) == kExitOk);
  CHECK(read_json(s / "k.json").at("indices") == json::array({0, 2}));
  CHECK(run({"--config", s / "c.json", "select-keyviews", "-k", "9", "--out", s / "k.json"}) == kExitInvalid);
}

TEST_CASE("stage commands chain into a styled scene and a report") {
  Scratch s("stages");
  write_json({{"width", 16}, {"height", 16}, {"cameras", 4}, {"steps", 4}}, s / "c.json");
  const std::string cfg = s / "c.json";
  REQUIRE(run({"--config", cfg, "gen-scene", "--gaussians", "80", "--groups", "2", "--out", s / "s.json"}) == kExitOk);
  REQUIRE(run({"--config", cfg, "stylize-keyviews", "--scene", s / "s.json", "--views", "2", "--out", s / "kv"}) ==
          kExitOk);
  CHECK(fs::exists(s.dir / "kv" / "view_0.png"));
  CHECK(fs::exists(s.dir / "kv" / "view_1.png"));
  const json manifest = read_json(s / "kv/manifest.json");
  CHECK(manifest.at("indices") == json::array({0, 2}));
  CHECK(load_key_views(s.dir / "kv").size() == 2);

  REQUIRE(run({"--config", cfg, "transfer", "--scene", s / "s.json", "--keyviews", s / "kv", "--iters", "8",
               "--out", s / "styled.json", "--trace", s / "trace.csv"}) == kExitOk);
  CHECK(validate_scene(load_scene(s / "styled.json")).empty());
  CHECK(read_text(s / "trace.csv").rfind("iteration,style_loss,content_loss,total\n", 0) == 0);

  REQUIRE(run({"--config", cfg, "metrics", "--scene", s / "styled.json", "--content", s / "s.json", "--out",
               s / "m.json"}) == kExitOk);
  const json m = read_json(s / "m.json");
  CHECK(m.contains("short_range"));
  CHECK(m.contains("long_range"));
  CHECK(m.at("gram_style_loss").get<double>() >= 0.0);
  CHECK(m.at("content_loss").get<double>() > 0.0);

  CHECK(run({"--config", cfg, "transfer", "--scene", s / "s.json", "--keyviews", s / "nowhere", "--out",
             s / "x.json"}) == kExitUsage);
  CHECK(run({"--config", cfg, "transfer", "--scene", s / "s.json", "--keyviews", s / "kv", "--mode", "sideways",
             "--out", s / "x.json"}) == kExitUsage);
}

TEST_CASE("pipeline writes a complete, reproducible directory") {
  Scratch s("pipeline");
  write_json({{"width", 16}, {"height", 16}, {"cameras", 4}, {"steps", 3}, {"iters", 6}, {"gaussians", 60}},
             s / "c.json");
  REQUIRE(run({"--config", s / "c.json", "pipeline", "--out", s / "a"}) == kExitOk);
  REQUIRE(run({"--config", s / "c.json", "pipeline", "--out", s / "b"}) == kExitOk);
  for (const char* leaf : {"config.resolved.json", "scene.json", "cameras.json", "style.png", "keys/key_0.png",
                           "stylized/view_0.png", "stylized/view_1.png", "styled_scene.json", "trace.csv",
                           "report.json", "manifest.json"}) {
    CHECK(fs::exists(s.dir / "a" / leaf));
  }
  CHECK(read_text(s / "a/manifest.json") == read_text(s / "b/manifest.json"));
  const json manifest = read_json(s / "a/manifest.json");
  CHECK(manifest.at("files") == hash_directory(s.dir / "a"));

  REQUIRE(run({"--config", s / "c.json", "pipeline", "--cvsa-block", "none", "--mode", "direct", "--out", s / "d"}) ==
          kExitOk);
  const json report = read_json(s / "d/report.json");
  CHECK(report.at("mode") == "direct");
  CHECK(report.at("cvsa_block") == "none");
}

TEST_CASE("run config") {
  RunConfig cfg;
  CHECK(cfg.get<int>("cameras") == 8);
  CHECK(cfg.get<int>("key_views") == 2);
  CHECK(cfg.get<int>("iters") == 300);
  CHECK(cfg.get<double>("lr") == 0.01);
  CHECK(cfg.get<double>("lambda_content") == 0.05);
  cfg.merge({{"lr", 1}});  // integers are accepted for real-valued keys
  CHECK(cfg.get<double>("lr") == 1.0);
  CHECK_THROWS_AS(cfg.merge({{"iters", 2.5}}), ConfigError);
  CHECK_THROWS_AS(cfg.merge({{"lr", "fast"}}), ConfigError);
  CHECK_THROWS_AS(cfg.merge({{"learning_rate", 0.1}}), ConfigError);
  CHECK(cfg.stage_seed("scene") != cfg.stage_seed("style"));

  const Image a = builtin_style("builtin:stripes", 16, 16, 1), b = builtin_style("builtin:stripes", 16, 16, 1);
  CHECK(a == b);
  CHECK(a.data().minCoeff() >= 0.0);
  CHECK(a.data().maxCoeff() <= 1.0);
  CHECK_THROWS_AS(builtin_style("builtin:plaid", 8, 8, 1), ConfigError);
}
