#include "doctest.h"

#include "stylesplat/group.hpp"
#include "stylesplat/oracles.hpp"

#include <set>

using namespace stylesplat;

namespace {

GroupIdentityMap make_map(int h, int w, std::vector<int> ids) { return {h, w, std::move(ids), "test"}; }

GroupSet sets_with_empty(const std::vector<bool>& empty) {
  GroupSet s{1, int(empty.size()), {}};
  s.groups.resize(empty.size());
  for (std::size_t i = 0; i < empty.size(); ++i) {
    if (!empty[i]) s.groups[i].push_back({0, int(i)});
  }
  return s;
}

}  // namespace

TEST_CASE("classify_identity: one-hot, ties and background") {
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(4);
  Image e(1, 3, kIdDim), cov(1, 3, 1, 1.0);
  e(0, 0, 2) = 10.0;
  e(0, 1, 1) = 5.0;
  e(0, 1, 3) = 5.0;
  e(0, 2, 0) = 10.0;
  cov(0, 2, 0) = 0.0;
  const GroupIdentityMap m = classify_identity(e, clf, cov);
  CHECK(m.at(0, 0) == 2);
  CHECK(m.at(0, 1) == 1);
  CHECK(m.at(0, 2) == kBackground);
}

TEST_CASE("classify_identity is invariant to monotone logit rescaling") {
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(5);
  Rng rng(3);
  Image e(6, 6, kIdDim), cov(6, 6, 1, 1.0);
  for (Eigen::Index i = 0; i < e.data().size(); ++i) e.data().data()[i] = rng.uniform(-2, 2);
  const GroupIdentityMap base = classify_identity(e, clf, cov);
  for (double s : {0.01, 3.0, 250.0}) {
    IdentityClassifier scaled = clf;
    scaled.weight *= s;
    scaled.bias = Eigen::VectorXd::Constant(5, -7.0);  // shared offset
    CHECK(classify_identity(e, scaled, cov).ids == base.ids);
  }
}

TEST_CASE("render_identity_map: single group, empty view") {
  const GaussianScene scene = make_scene("blocks", 100, 1, 4);
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(1);
  const Camera cam = orbit_cameras(8, 2.5, 1.0, 50, 32, 32)[0];
  const GroupIdentityMap m = render_identity_map(scene, cam, clf);
  const RenderOutput out = render(scene, cam);
  int covered = 0;
  for (int r = 0; r < 32; ++r) {
    for (int c = 0; c < 32; ++c) {
      if (out.coverage(r, c, 0) >= kCoverageThreshold) {
        CHECK(m.at(r, c) == 0);
        ++covered;
      }
    }
  }
  CHECK(covered > 100);

  const Camera away = look_at(Vec3(0, 0, 5), Vec3(0, 0, 10), Vec3::UnitY(), 50, 16, 16);
  const GroupIdentityMap none = render_identity_map(scene, away, clf);
  for (int id : none.ids) CHECK(id == kBackground);
}

TEST_CASE("render_identity_map equals the compositing oracle") {
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(4);
  RenderOptions opts;
  opts.falloff_cutoff = false;
  for (const char* preset : {"blocks", "orbit-clutter"}) {
    const GaussianScene scene = make_scene(preset, 300, 4, 6);
    const Camera cam = orbit_cameras(8, 2.5, 1.0, 50, 48, 48)[2];
    CHECK(render_identity_map(scene, cam, clf, opts).ids == oracle::brute_force_identity_map(scene, cam).ids);
  }
}

TEST_CASE("identity maps recover the generating group") {
  // Colors set to one-hot group indicators; the rendered color then carries the
  // composited weight of each group.
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(3);
  GaussianScene scene = make_scene("blocks", 500, 3, 7);
  scene.background = Vec3::Zero();
  for (auto& g : scene.gaussians) g.color = Vec3::Unit(encoded_group(g));
  for (const Camera& cam : orbit_cameras(8, 2.5, 1.0, 50, 64, 64)) {
    const RenderOutput out = render(scene, cam);
    const GroupIdentityMap m = render_identity_map(scene, cam, clf);
    int total = 0, agree = 0;
    for (int r = 0; r < 64; ++r) {
      for (int c = 0; c < 64; ++c) {
        if (out.coverage(r, c, 0) <= 0.5) continue;
        Eigen::Index g = 0;
        out.color.pixel(r, c).maxCoeff(&g);
        ++total;
        agree += m.at(r, c) == int(g) ? 1 : 0;
      }
    }
    CHECK(agree >= 0.99 * total);
  }
}

TEST_CASE("build_group_sets") {
  const GroupSet s = build_group_sets(make_map(2, 2, {0, 1, 1, 0}), 2);
  REQUIRE(s.k() == 2);
  CHECK(s.groups[0] == std::vector<PixelCoord>{{0, 0}, {1, 1}});
  CHECK(s.groups[1] == std::vector<PixelCoord>{{0, 1}, {1, 0}});

  const GroupSet bg = build_group_sets(make_map(2, 2, {-1, -1, -1, -1}), 3);
  for (const auto& g : bg.groups) CHECK(g.empty());
  CHECK_THROWS_AS(build_group_sets(make_map(1, 2, {0, 3}), 3), ValidationError);
}

TEST_CASE("group sets partition the labelled pixels") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 1 + rng.below(9), w = 1 + rng.below(9), k = 1 + rng.below(5);
    std::vector<int> ids(std::size_t(h) * w);
    for (int& id : ids) id = rng.below(k + 1) - 1;
    const GroupSet s = build_group_sets(make_map(h, w, ids), k);
    std::set<PixelCoord> seen;
    std::size_t total = 0;
    for (int g = 0; g < k; ++g) {
      for (const auto& p : s.groups[g]) {
        CHECK(ids[std::size_t(p.row) * w + p.col] == g);
        seen.insert(p);
      }
      total += s.groups[g].size();
    }
    CHECK(seen.size() == total);  // disjoint
    CHECK(long(total) == std::count_if(ids.begin(), ids.end(), [](int id) { return id != kBackground; }));
  }
}

TEST_CASE("match_groups") {
  const GroupSet full = sets_with_empty({false, false, false});
  SUBCASE("all nonempty") {
    const ViewMatching m = match_groups(full, full);
    CHECK(m.target == std::vector<int>{0, 1, 2});
  }
  SUBCASE("one empty key group") {
    const ViewMatching m = match_groups(full, sets_with_empty({false, true, false}));
    CHECK(m.target == std::vector<int>{0, ViewMatching::kGlobal, 2});
  }
  SUBCASE("all empty") {
    const ViewMatching m = match_groups(full, sets_with_empty({true, true, true}));
    for (int i = 0; i < 3; ++i) CHECK(m.is_global(i));
  }
  SUBCASE("depends only on the key side") {
    const GroupSet key = sets_with_empty({true, false, false});
    const ViewMatching a = match_groups(full, key);
    CHECK(match_groups(sets_with_empty({true, true, false}), key).target == a.target);
    CHECK(match_groups(sets_with_empty({true, true, true}), key).target == a.target);
  }
  SUBCASE("one matching per key view") {
    const GroupMatching gm = match_groups(full, std::vector<GroupSet>{full, sets_with_empty({true, false, true})});
    REQUIRE(gm.views.size() == 2);
    CHECK(gm.views[1].target == std::vector<int>{ViewMatching::kGlobal, 1, ViewMatching::kGlobal});
  }
  CHECK_THROWS_AS(match_groups(full, sets_with_empty({false, false})), ValidationError);
}

TEST_CASE("downsample_group_map") {
  const GroupIdentityMap m = make_map(2, 4, {0, 0, 2, 2, 1, 2, 2, 2});
  CHECK(downsample_group_map(m, 1).ids == m.ids);
  const GroupIdentityMap d = downsample_group_map(m, 2);
  REQUIRE(d.height == 1);
  REQUIRE(d.width == 2);
  CHECK(d.at(0, 0) == 0);  // [0, 0, 1, 2]
  CHECK(d.at(0, 1) == 2);  // uniform
  CHECK(downsample_group_map(make_map(2, 2, {1, 0, 0, 1}), 2).at(0, 0) == 0);    // tie -> lowest id
  CHECK(downsample_group_map(make_map(2, 2, {-1, -1, 0, 1}), 2).at(0, 0) == 0);  // no strict majority
  CHECK(downsample_group_map(make_map(2, 2, {-1, -1, -1, 1}), 2).at(0, 0) == kBackground);
}

TEST_CASE("group map bytes mark background as 255") {
  CHECK(group_map_bytes(make_map(1, 3, {0, -1, 4})) == std::vector<unsigned char>{0, kBackgroundPng, 4});
}
