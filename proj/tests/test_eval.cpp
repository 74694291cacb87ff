#include "doctest.h"

#include "stylesplat/eval.hpp"
#include "stylesplat/pipeline.hpp"

#include <cmath>

using namespace stylesplat;

namespace {

// Square grid of flat disks in the plane z = depth, spanning [-half, half]^2.
void add_plane(GaussianScene& scene, double depth, double half, int n, const Vec3& color) {
  const double spacing = 2.0 * half / n;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      Gaussian g;
      g.mu = Vec3(-half + (i + 0.5) * spacing, -half + (j + 0.5) * spacing, depth);
      g.scale = Vec3(0.6 * spacing, 0.6 * spacing, 0.001);
      g.opacity = 0.95;
      g.color = color;
      g.color[(i + j) % 3] = std::min(1.0, g.color[(i + j) % 3] + 0.2);
      scene.gaussians.push_back(g);
    }
  }
}

Camera forward_camera(const Vec3& eye, int size = 48) {
  return look_at(eye, eye + Vec3::UnitZ(), Vec3::UnitY(), 50, size, size);
}

double masked_rmse(const Image& a, const Image& b, const PixelMask& mask) {
  double sum = 0.0;
  long n = 0;
  for (Eigen::Index p = 0; p < a.pixel_count(); ++p) {
    if (!mask[std::size_t(p)]) continue;
    sum += (a.data().row(p) - b.data().row(p)).squaredNorm();
    n += 3;
  }
  return std::sqrt(sum / double(n));
}

}  // namespace

TEST_CASE("identity warp reproduces the covered pixels") {
  const GaussianScene scene = make_scene("blocks", 300, 4, 7);
  const Camera cam = orbit_cameras(8, 2.5, 1.0, 50, 48, 48)[1];
  const RenderOutput out = render(scene, cam);
  const WarpResult wr = warp_view(out, cam, cam, out);
  for (int r = 0; r < 48; ++r) {
    for (int c = 0; c < 48; ++c) {
      const bool covered = out.coverage(r, c, 0) >= kCoverageThreshold;
      CHECK(bool(wr.mask[std::size_t(r) * 48 + c]) == covered);
      if (covered) CHECK((wr.warped.pixel(r, c) - out.color.pixel(r, c)).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("small translation over a plane is bilinear resampling only") {
  const GaussianScene scene = make_scene("plane", 400, 2, 3);
  const Camera a = forward_camera(Vec3(0, 0, -3), 64), b = forward_camera(Vec3(0.1, 0.05, -3), 64);
  const RenderOutput ra = render(scene, a), rb = render(scene, b);
  const WarpResult wr = warp_view(ra, a, b, rb);
  CHECK(wr.covisible() > 1000);
  CHECK(masked_rmse(wr.warped, rb.color, wr.mask) < 0.02);
}

TEST_CASE("disoccluded destination pixels are masked out") {
  GaussianScene scene;
  scene.n_groups = 1;
  add_plane(scene, 1.0, 2.0, 40, Vec3(0.2, 0.3, 0.6));
  add_plane(scene, 0.0, 0.4, 12, Vec3(0.8, 0.5, 0.1));
  const Vec3 eye_src(0, 0, -3), eye_dst(1.5, 0, -3);
  const Camera src = forward_camera(eye_src), dst = forward_camera(eye_dst);
  const RenderOutput rs = render(scene, src), rd = render(scene, dst);
  const WarpResult wr = warp_view(rs, src, dst, rd);

  int hidden = 0;
  for (int r = 0; r < 48; ++r) {
    for (int c = 0; c < 48; ++c) {
      if (rd.coverage(r, c, 0) < 0.99) continue;
      const double z = rd.depth(r, c, 0);
      const Vec3 p = dst.camera_to_world(Vec3((c + 0.5 - 24) / dst.focal() * z, (r + 0.5 - 24) / dst.focal() * z, z));
      if (std::abs(p.z() - 1.0) > 0.05) continue;  // only the back plane
      // Where the ray from the source camera to p crosses the front plane.
      const Vec3 q = eye_src + (p - eye_src) * (3.0 / (p.z() + 3.0));
      if (std::abs(q.x()) < 0.33 && std::abs(q.y()) < 0.33) {
        CHECK_FALSE(wr.mask[std::size_t(r) * 48 + c]);
        ++hidden;
      }
    }
  }
  CHECK(hidden > 20);
}

TEST_CASE("warp_view preconditions") {
  const GaussianScene scene = make_scene("plane", 50, 1, 1);
  const Camera cam = forward_camera(Vec3(0, 0, -3), 16);
  RenderOutput out = render(scene, cam);
  CHECK_THROWS_AS(warp_view(out, forward_camera(Vec3(0, 0, -3), 24), cam, out), ValidationError);
  RenderOutput no_depth = out;
  no_depth.depth = Image();
  CHECK_THROWS_AS(warp_view(no_depth, cam, cam, out), ValidationError);
  CHECK_THROWS_AS(warp_view(out, cam, cam, no_depth), ValidationError);
}

TEST_CASE("consistency_score") {
  const FeatureExtractor fx(5);
  Rng rng(3);
  Image a(16, 16, 3), b(16, 16, 3);
  for (Eigen::Index i = 0; i < a.data().size(); ++i) {
    a.data().data()[i] = rng.uniform();
    b.data().data()[i] = rng.uniform();
  }
  PixelMask full(256, 1), partial(256, 0);
  for (std::size_t p = 0; p < 256; p += 3) partial[p] = 1;

  CHECK(consistency_score(a, a, partial, fx, ScoreMode::rmse) == 0.0);
  CHECK(consistency_score(a, a, full, fx, ScoreMode::feature) == 0.0);
  Image shifted = a;
  shifted.data().array() += 0.1;
  CHECK(consistency_score(shifted, a, full, fx, ScoreMode::rmse) == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(consistency_score(a, b, partial, fx, ScoreMode::rmse) == doctest::Approx(masked_rmse(a, b, partial)).epsilon(1e-12));

  // Feature mode over majority-masked cells.
  PixelMask left(256, 0);
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 8; ++c) left[std::size_t(r) * 16 + c] = 1;
  }
  Image filled = b;
  for (std::size_t p = 0; p < 256; ++p) {
    if (left[p]) filled.data().row(Eigen::Index(p)) = a.data().row(Eigen::Index(p));
  }
  const FeatureMap fa = fx.extract(filled), fb = fx.extract(b);
  double sum = 0.0;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 2; ++c) sum += (fa.features.pixel(r, c) - fb.features.pixel(r, c)).squaredNorm();
  }
  CHECK(consistency_score(a, b, left, fx, ScoreMode::feature) ==
        doctest::Approx(std::sqrt(sum / (8.0 * fx.dim()))).epsilon(1e-12));

  CHECK_THROWS_AS(consistency_score(a, b, PixelMask(256, 0), fx, ScoreMode::rmse), DegenerateError);
  CHECK_THROWS_AS(consistency_score(a, Image(8, 8, 3), full, fx, ScoreMode::rmse), ValidationError);
  CHECK_THROWS_AS(consistency_score(a, b, PixelMask(10, 1), fx, ScoreMode::rmse), ValidationError);
}

TEST_CASE("perceptual metrics") {
  const FeatureExtractor fx(5);
  Rng rng(4);
  Image img(16, 16, 3), style(16, 16, 3);
  for (Eigen::Index i = 0; i < img.data().size(); ++i) {
    img.data().data()[i] = rng.uniform();
    style.data().data()[i] = rng.uniform();
  }
  const PerceptualMetrics same = perceptual_metrics(img, img, img, fx);
  CHECK(same.style_loss == 0.0);
  CHECK(same.content_loss == 0.0);
  const PerceptualMetrics m = perceptual_metrics(img, style, style, fx);
  CHECK(m.style_loss > 0.0);
  CHECK(m.content_loss > 0.0);

  // Gram statistics ignore where a cell sits; the content loss does not.
  const FeatureMap f = fx.extract(img);
  FeatureMap perm = f;
  const Eigen::Index n = f.features.pixel_count();
  for (Eigen::Index p = 0; p < n; ++p) perm.features.data().row(p) = f.features.data().row((p * 7 + 3) % n);
  CHECK(gram_style_loss(f, perm) < 1e-6);
  CHECK(content_loss(f, perm) > 0.0);

  const Eigen::MatrixXd g = gram_matrix(f);
  CHECK((g - f.features.data().transpose() * f.features.data() / double(n)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(perceptual_metrics(img, style, Image(8, 8, 3), fx), ValidationError);
}

TEST_CASE("consistency report: identical cameras score zero") {
  const GaussianScene scene = make_scene("blocks", 200, 4, 7);
  const Camera cam = orbit_cameras(8, 2.5, 1.0, 50, 32, 32)[0];
  const std::vector<Camera> cams{cam, cam};
  const ConsistencyReport rep = consistency_report(scene, cams, FeatureExtractor(1));
  REQUIRE(rep.pairs.size() == 3);
  for (const auto& p : rep.pairs) {
    CHECK(p.covisible > 0);
    CHECK(p.rmse < 1e-12);
    CHECK(p.feature_defined);
    CHECK(p.feature_rmse < 1e-12);
  }
  CHECK(rep.short_range.pairs == 1);
  CHECK(rep.long_range.pairs == 2);
  CHECK_THROWS_AS(consistency_report(scene, std::vector<Camera>{cam}, FeatureExtractor(1)), ValidationError);
}

TEST_CASE("consistency report pairs") {
  const GaussianScene scene = make_scene("blocks", 200, 4, 7);
  const auto cams = orbit_cameras(6, 2.5, 1.0, 50, 32, 32);
  const ConsistencyReport rep = consistency_report(scene, cams, FeatureExtractor(1));
  REQUIRE(rep.pairs.size() == 11);
  for (int i = 0; i < 5; ++i) {
    CHECK(rep.pairs[i].src == i);
    CHECK(rep.pairs[i].dst == i + 1);
    CHECK_FALSE(rep.pairs[i].long_range);
  }
  for (int i = 0; i < 6; ++i) {
    CHECK(rep.pairs[5 + i].long_range);
    CHECK(rep.pairs[5 + i].dst == (i + 3) % 6);  // the opposite camera
  }
}

TEST_CASE("unstylized reference scene on the 8-camera orbit") {
  const RunConfig cfg;
  const ConsistencyReport rep = consistency_report(cfg.scene(), cfg.cameras(), cfg.feature_extractor());
  MESSAGE("short-range rmse " << rep.short_range.rmse << " over " << rep.short_range.pairs << " pairs");
  CHECK(rep.short_range.pairs == 7);
  CHECK(rep.short_range.rmse < 0.05);
  for (const auto& p : rep.pairs) {
    CHECK(std::isfinite(p.rmse));
    CHECK(p.rmse >= 0.0);
    CHECK(p.feature_rmse >= 0.0);
  }
}

TEST_CASE("key-view agreement") {
  const GaussianScene scene = make_scene("blocks", 300, 4, 7);
  const auto all = orbit_cameras(8, 2.5, 1.0, 50, 32, 32);
  const std::vector<Camera> cams{all[0], all[1]};
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(4);
  std::vector<RenderOutput> renders;
  std::vector<Image> colors;
  std::vector<GroupIdentityMap> ids;
  for (const auto& c : cams) {
    renders.push_back(render(scene, c));
    colors.push_back(renders.back().color);
    ids.push_back(classify_identity(renders.back().id_features, clf, renders.back().coverage));
  }
  const FeatureExtractor fx(2);
  const KeyViewConsistency kv = key_view_consistency(colors, renders, cams, ids, fx);
  CHECK(kv.pairs == 2);
  CHECK(kv.warp_rmse < 0.05);
  CHECK(kv.instance_feature_distance >= 0.0);

  // Identical views agree exactly.
  const std::vector<Camera> same{cams[0], cams[0]};
  const std::vector<RenderOutput> same_r{renders[0], renders[0]};
  const std::vector<Image> same_c{colors[0], colors[0]};
  const std::vector<GroupIdentityMap> same_i{ids[0], ids[0]};
  const KeyViewConsistency z = key_view_consistency(same_c, same_r, same, same_i, fx);
  CHECK(z.warp_rmse < 1e-12);
  CHECK(z.instance_feature_distance < 1e-12);
  CHECK_THROWS_AS(key_view_consistency(same_c, same_r, std::vector<Camera>{cams[0]}, same_i, fx), ValidationError);
}
