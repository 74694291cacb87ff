#include "doctest.h"

#include "stylesplat/io.hpp"
#include "stylesplat/oracles.hpp"
#include "stylesplat/style.hpp"

#include <algorithm>
#include <cmath>

using namespace stylesplat;

namespace {

FeatureMap feature_map(int h, int w, int d, Rng& rng) {
  FeatureMap f{Image(h, w, d), 4, {}};
  for (Eigen::Index i = 0; i < f.features.data().size(); ++i) f.features.data().data()[i] = rng.normal();
  return f;
}

GroupIdentityMap random_ids(int h, int w, int k, Rng& rng) {
  GroupIdentityMap m{h, w, std::vector<int>(std::size_t(h) * w), {}};
  for (int& id : m.ids) id = rng.below(k + 1) - 1;  // background included
  return m;
}

struct Instance {
  FeatureMap query;
  std::vector<FeatureMap> keys;
  GroupIdentityMap query_ids;
  std::vector<GroupIdentityMap> key_ids;
  GroupMatching matching;
  int k = 1;
};

Instance random_instance(Rng& rng, int k) {
  Instance in;
  in.k = k;
  const int d = 2 + rng.below(6);
  const int h = 1 + rng.below(32), w = 1 + rng.below(32);
  in.query = feature_map(h, w, d, rng);
  in.query_ids = random_ids(h, w, k, rng);
  const int views = 1 + rng.below(3);
  std::vector<GroupSet> sets;
  for (int v = 0; v < views; ++v) {
    const int kh = 1 + rng.below(32), kw = 1 + rng.below(32);
    in.keys.push_back(feature_map(kh, kw, d, rng));
    in.key_ids.push_back(random_ids(kh, kw, k, rng));
    // Keep at least one labelled key cell so the matching is never fully degenerate.
    in.key_ids.back().ids[0] = rng.below(k);
    sets.push_back(build_group_sets(in.key_ids.back(), k));
  }
  in.matching = match_groups(build_group_sets(in.query_ids, k), sets);
  return in;
}

StyleLossResult loss(const Instance& in) {
  return instance_style_loss(in.query, in.keys, in.matching, in.query_ids, in.key_ids);
}

GaussianScene small_scene() { return make_scene("blocks", 80, 2, 5); }

std::vector<KeyView> key_views_for(const GaussianScene& scene, const std::vector<Camera>& cams, const Image& style) {
  std::vector<KeyView> kv;
  for (int i : {0, 2}) {
    Image img = render(scene, cams[std::size_t(i)]).color;
    img.data() = 0.5 * img.data() + 0.5 * style.data();
    kv.push_back({cams[std::size_t(i)], img});
  }
  return kv;
}

Image stripes(int h, int w) {
  Image img(h, w, 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) img.pixel(r, c) = ((r + c) / 2 % 2) ? Eigen::RowVector3d(0.9, 0.8, 0.1) : Eigen::RowVector3d(0.1, 0.2, 0.7);
  }
  return img;
}

}  // namespace

TEST_CASE("feature extractor: constant input, shift, determinism") {
  const FeatureExtractor fx(11);
  CHECK(fx.stride() == 4);
  CHECK(fx.dim() == 32);

  const FeatureMap c = fx.extract(Image(16, 24, 3, 0.4));
  CHECK(c.height() == 4);
  CHECK(c.width() == 6);
  for (Eigen::Index p = 1; p < c.features.pixel_count(); ++p) {
    CHECK((c.features.data().row(p) - c.features.data().row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }

  Rng rng(2);
  Image img(32, 32, 3), shifted(32, 32, 3);
  for (Eigen::Index i = 0; i < img.data().size(); ++i) img.data().data()[i] = rng.uniform();
  for (int r = 0; r < 32; ++r) {
    for (int col = 0; col < 32; ++col) shifted.pixel(r, col) = img.pixel(r, std::max(0, col - 4));
  }
  const FeatureMap a = fx.extract(img), b = fx.extract(shifted);
  // Cells away from both borders see identical receptive fields.
  for (int r = 2; r < 6; ++r) {
    for (int col = 2; col < 7; ++col) {
      CHECK((b.features.pixel(r, col) - a.features.pixel(r, col - 1)).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  CHECK(fx.extract(img).features == a.features);
  CHECK_THROWS_AS(fx.extract(Image(10, 12, 3)), ValidationError);
  CHECK_THROWS_AS(fx.extract(Image(16, 16, 1)), ValidationError);
}

TEST_CASE("feature extractor backward matches central differences") {
  const FeatureExtractor fx(3, 2, 8);
  Rng rng(4);
  Image img(8, 8, 3), weights(2, 2, 8);
  for (Eigen::Index i = 0; i < img.data().size(); ++i) img.data().data()[i] = rng.uniform();
  for (Eigen::Index i = 0; i < weights.data().size(); ++i) weights.data().data()[i] = rng.uniform(-1, 1);
  const Image g = fx.backward(fx.forward(img), weights);
  auto f = [&](const Eigen::VectorXd& x) {
    Image im = img;
    im.data() = Eigen::Map<const RowMatrix<double>>(x.data(), 64, 3);
    return fx.extract(im).features.data().cwiseProduct(weights.data()).sum();
  };
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(img.data().data(), img.data().size());
  for (int i = 0; i < x.size(); i += 5) {
    const double fd = oracle::central_difference(f, x, i, 1e-6);
    CHECK(std::abs(fd - g.data().data()[i]) < 1e-6 + 1e-5 * std::abs(fd));
  }
}

TEST_CASE("instance loss: self match is zero") {
  Rng rng(1);
  Instance in = random_instance(rng, 3);
  in.keys = {in.query};
  in.key_ids = {in.query_ids};
  in.matching = match_groups(build_group_sets(in.query_ids, 3), std::vector<GroupSet>{build_group_sets(in.query_ids, 3)});
  const StyleLossResult r = loss(in);
  CHECK(std::abs(r.report.total) < 1e-12);
  CHECK(r.grad.data().cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("instance loss: hand-evaluated 1x2 example") {
  FeatureMap q{Image(1, 2, 2), 1, {}}, s{Image(1, 2, 2), 1, {}};
  q.features.data() << 1, 0, 0, 1;
  s.features.data() << 0, 1, 0, 1;
  const GroupIdentityMap ids{1, 2, {0, 1}, {}};
  const std::vector<FeatureMap> keys{s};
  const std::vector<GroupIdentityMap> key_ids{ids};
  const GroupMatching m = match_groups(build_group_sets(ids, 2), std::vector<GroupSet>{build_group_sets(ids, 2)});
  const StyleLossResult r = instance_style_loss(q, keys, m, ids, key_ids);
  CHECK(r.report.total == doctest::Approx(0.5).epsilon(1e-12));
  REQUIRE(r.report.per_group.size() == 2);
  CHECK(*r.report.per_group[0] == doctest::Approx(1.0));
  CHECK(*r.report.per_group[1] == doctest::Approx(0.0));
  CHECK(r.report.n == 2);
  CHECK(nnfm_oracle(q, keys, m, ids, key_ids) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("instance loss equals the exhaustive oracle on random instances") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const Instance in = random_instance(rng, 1 + rng.below(4));
    if (std::all_of(in.query_ids.ids.begin(), in.query_ids.ids.end(), [](int id) { return id == kBackground; })) continue;
    const double fast = loss(in).report.total;
    CHECK(std::abs(fast - nnfm_oracle(in.query, in.keys, in.matching, in.query_ids, in.key_ids)) < 1e-6);
  }
}

TEST_CASE("single group reduces to global nearest-neighbor matching") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(rng, 1);
    if (std::all_of(in.query_ids.ids.begin(), in.query_ids.ids.end(), [](int id) { return id == kBackground; })) continue;
    CHECK(std::abs(loss(in).report.total - oracle::global_nnfm(in.query, in.keys, in.query_ids, in.key_ids)) < 1e-6);
  }
}

TEST_CASE("group restriction never beats the global minimum") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(rng, 3);
    if (std::all_of(in.query_ids.ids.begin(), in.query_ids.ids.end(), [](int id) { return id == kBackground; })) continue;
    CHECK(loss(in).report.total >= oracle::global_nnfm(in.query, in.keys, in.query_ids, in.key_ids) - 1e-12);
  }
}

TEST_CASE("instance loss is invariant to per-vector positive scaling") {
  Rng rng(5);
  Instance in = random_instance(rng, 2);
  in.query_ids.ids[0] = 0;
  const double base = loss(in).report.total;
  for (Eigen::Index p = 0; p < in.query.features.pixel_count(); ++p) in.query.features.data().row(p) *= rng.uniform(0.1, 5);
  for (auto& k : in.keys) {
    for (Eigen::Index p = 0; p < k.features.pixel_count(); ++p) k.features.data().row(p) *= rng.uniform(0.1, 5);
  }
  CHECK(std::abs(loss(in).report.total - base) < 1e-6);
}

TEST_CASE("key-view order does not change the oracle value") {
  Rng rng(6);
  Instance in;
  do {
    in = random_instance(rng, 2);
  } while (in.keys.size() < 2);
  in.query_ids.ids[0] = 1;
  const double a = nnfm_oracle(in.query, in.keys, in.matching, in.query_ids, in.key_ids);
  std::reverse(in.keys.begin(), in.keys.end());
  std::reverse(in.key_ids.begin(), in.key_ids.end());
  std::reverse(in.matching.views.begin(), in.matching.views.end());
  CHECK(std::abs(nnfm_oracle(in.query, in.keys, in.matching, in.query_ids, in.key_ids) - a) < 1e-12);
}

TEST_CASE("instance loss gradient with frozen matches") {
  Rng rng(8);
  Instance in = random_instance(rng, 2);
  in.query_ids.ids[0] = 0;
  const StyleLossResult r = loss(in);
  auto f = [&](const Eigen::VectorXd& x) {
    FeatureMap q = in.query;
    q.features.data() = Eigen::Map<const RowMatrix<double>>(x.data(), q.features.pixel_count(), q.dim());
    return style_loss_fixed_matches(q, in.keys, r.report.matched).report.total;
  };
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(in.query.features.data().data(), in.query.features.data().size());
  for (int i = 0; i < x.size(); i += 3) {
    const double fd = oracle::central_difference(f, x, i, 1e-6);
    CHECK(std::abs(fd - r.grad.data().data()[i]) < 1e-6 + 1e-4 * std::abs(fd));
  }
}

TEST_CASE("every key group empty is degenerate") {
  Rng rng(9);
  Instance in = random_instance(rng, 2);
  for (auto& m : in.key_ids) std::fill(m.ids.begin(), m.ids.end(), kBackground);
  std::vector<GroupSet> sets;
  for (const auto& m : in.key_ids) sets.push_back(build_group_sets(m, 2));
  in.matching = match_groups(build_group_sets(in.query_ids, 2), sets);
  in.query_ids.ids[0] = 0;
  CHECK_THROWS_AS(loss(in), DegenerateError);
}

TEST_CASE("select_key_views") {
  const auto cams = orbit_cameras(8, 3.0, 0.0, 50, 8, 8);
  CHECK(select_key_views(cams, 1) == std::vector<int>{0});
  CHECK(select_key_views(cams, 4) == std::vector<int>{0, 4, 2, 6});
  std::vector<int> all = select_key_views(cams, 8);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK_THROWS_AS(select_key_views(cams, 0), ValidationError);
  CHECK_THROWS_AS(select_key_views(cams, 9), ValidationError);

  // Angles: 90 degrees apart at k=4, and the best spread any subset reaches.
  const auto sel = select_key_views(cams, 4);
  std::vector<Vec3> pos;
  for (const auto& c : cams) pos.push_back(c.position);
  double spread = 1e9;
  for (int a : sel) {
    for (int b : sel) {
      if (a == b) continue;
      const double cosang = pos[a].normalized().dot(pos[b].normalized());
      CHECK(cosang <= 1e-9);
      spread = std::min(spread, (pos[a] - pos[b]).norm());
    }
  }
  CHECK(spread == doctest::Approx(oracle::best_subset_spread(pos, 4)));
}

TEST_CASE("transfer config parsing and validation") {
  CHECK(parse_optimizer("adam") == OptimizerKind::adam);
  CHECK(parse_optimizer("sgd") == OptimizerKind::sgd);
  CHECK(parse_transfer_mode("direct") == TransferMode::direct);
  CHECK(to_string(TransferMode::ist) == "ist");
  CHECK_THROWS_AS(parse_optimizer("lbfgs"), ConfigError);
  CHECK_THROWS_AS(parse_transfer_mode("both"), ConfigError);
  TransferConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.iterations = -1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.step_size = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.batch = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("optimize_scene: zero iterations and content-only runs") {
  const GaussianScene scene = small_scene();
  const auto cams = orbit_cameras(4, 2.5, 1.0, 50, 16, 16);
  const auto kv = key_views_for(scene, cams, stripes(16, 16));
  const FeatureExtractor fx(1);
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(2);

  TransferConfig cfg;
  cfg.iterations = 0;
  const TransferResult none = optimize_scene(scene, kv, cams, cfg, fx, clf);
  CHECK(none.trace.empty());
  CHECK(to_json(none.scene) == to_json(scene));

  cfg.iterations = 5;
  cfg.lambda_style = 0.0;
  cfg.lambda_content = 1.0;
  const TransferResult r = optimize_scene(scene, kv, cams, cfg, fx, clf);
  REQUIRE(r.trace.size() == 5);
  for (const auto& rec : r.trace) CHECK(std::abs(rec.total) < 1e-12);
  for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
    CHECK((r.scene.gaussians[i].color - scene.gaussians[i].color).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("optimize_scene reduces the loss and is deterministic") {
  const GaussianScene scene = small_scene();
  const auto cams = orbit_cameras(4, 2.5, 1.0, 50, 16, 16);
  const auto kv = key_views_for(scene, cams, stripes(16, 16));
  const FeatureExtractor fx(1);
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(2);
  for (TransferMode mode : {TransferMode::ist, TransferMode::direct}) {
    for (OptimizerKind opt : {OptimizerKind::adam, OptimizerKind::sgd}) {
      TransferConfig cfg;
      cfg.iterations = 40;
      cfg.mode = mode;
      cfg.optimizer = opt;
      cfg.step_size = opt == OptimizerKind::adam ? 0.01 : 0.5;
      cfg.seed = 3;
      const TransferResult a = optimize_scene(scene, kv, cams, cfg, fx, clf);
      const TransferResult b = optimize_scene(scene, kv, cams, cfg, fx, clf);
      CHECK(to_json(a.scene).dump() == to_json(b.scene).dump());
      CHECK(trace_decrease(a.trace) > 0.0);
      CHECK(validate_scene(a.scene).empty());
      CHECK(a.trace.front().camera == (mode == TransferMode::ist ? 3 : 1));
    }
  }
}

TEST_CASE("optimize_scene preconditions") {
  const GaussianScene scene = small_scene();
  const auto cams = orbit_cameras(4, 2.5, 1.0, 50, 16, 16);
  const auto kv = key_views_for(scene, cams, stripes(16, 16));
  const FeatureExtractor fx(1);
  TransferConfig cfg;
  cfg.iterations = 1;
  CHECK_THROWS_AS(optimize_scene(scene, {}, cams, cfg, fx, IdentityClassifier::identity_embedding(2)), ValidationError);
  CHECK_THROWS_AS(optimize_scene(scene, kv, cams, cfg, fx, IdentityClassifier::identity_embedding(3)), ValidationError);
  std::vector<KeyView> bad = kv;
  bad[0].stylized = Image(8, 8, 3);
  CHECK_THROWS_AS(optimize_scene(scene, bad, cams, cfg, fx, IdentityClassifier::identity_embedding(2)), ValidationError);
}

TEST_CASE("trace decrease compares revisits of the first camera") {
  std::vector<LossRecord> t{{0, 0, 0, 1.0, 0}, {1, 0, 0, 0.2, 1}, {2, 0, 0, 0.5, 0}, {3, 0, 0, 0.1, 1}};
  CHECK(trace_decrease(t) == doctest::Approx(0.5));
  CHECK(trace_decrease({}) == 0.0);
  CHECK(trace_csv(t).rfind("iteration,style_loss,content_loss,total\n", 0) == 0);
}
