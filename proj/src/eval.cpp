#include "stylesplat/eval.hpp"

#include <cmath>
#include <limits>

namespace stylesplat {

int WarpResult::covisible() const {
  int n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

WarpResult warp_view(const RenderOutput& src, const Camera& cam_src, const Camera& cam_dst, const RenderOutput& dst,
                     const WarpOptions& opts) {
  if (src.depth.empty() || src.depth.channels() != 1) throw ValidationError("source render has no depth channel");
  if (dst.depth.empty() || dst.depth.channels() != 1) throw ValidationError("destination render has no depth channel");
  if (src.height() != cam_src.height || src.width() != cam_src.width) {
    throw ValidationError("source render does not match its camera");
  }
  if (dst.depth.height() != cam_dst.height || dst.depth.width() != cam_dst.width) {
    throw ValidationError("destination render does not match its camera");
  }
  const int h = cam_dst.height, w = cam_dst.width;
  Image acc(h, w, 3), weight(h, w, 1);
  const double fs = cam_src.focal(), fd = cam_dst.focal();
  const Vec2 ps = cam_src.principal_point(), pd = cam_dst.principal_point();

  for (int r = 0; r < src.height(); ++r) {
    for (int c = 0; c < src.width(); ++c) {
      const double z = src.depth(r, c, 0);
      if (src.coverage(r, c, 0) < kCoverageThreshold || !(z > 0.0)) continue;
      const Vec3 p_cam((c + 0.5 - ps.x()) / fs * z, (r + 0.5 - ps.y()) / fs * z, z);
      const Vec3 q = cam_dst.world_to_camera(cam_src.camera_to_world(p_cam));
      if (!(q.z() > cam_dst.near)) continue;
      // Positions within rounding error of a pixel center snap to it, so an identity
      // warp does not pick up spurious neighbors.
      auto snap = [](double v) { return std::abs(v - std::round(v)) < 1e-9 ? std::round(v) : v; };
      const double x = snap(fd * q.x() / q.z() + pd.x() - 0.5);
      const double y = snap(fd * q.y() / q.z() + pd.y() - 0.5);
      const double x0 = std::floor(x), y0 = std::floor(y);
      const double ax = x - x0, ay = y - y0;
      // Destination depth interpolated at the reprojected position. Neighbors with
      // zero weight are ignored; any other neighbor without depth rejects the point.
      double d_dst = 0.0, w_dst = 0.0;
      bool valid = true;
      for (int dy = 0; dy <= 1 && valid; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
          const double bw = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
          const int tc = int(x0) + dx, tr = int(y0) + dy;
          if (bw <= 0.0 || tc < 0 || tr < 0 || tc >= w || tr >= h) continue;
          const double d = dst.depth(tr, tc, 0);
          if (!(d > 0.0)) {
            valid = false;
            break;
          }
          d_dst += bw * d;
          w_dst += bw;
        }
      }
      if (!valid || !(w_dst > 0.0)) continue;
      d_dst /= w_dst;
      if (std::abs(q.z() - d_dst) > opts.depth_tolerance * d_dst) continue;
      const Eigen::RowVector3d color = src.color.pixel(r, c);
      for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
          const double bw = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
          const int tc = int(x0) + dx, tr = int(y0) + dy;
          if (bw <= 0.0 || tc < 0 || tr < 0 || tc >= w || tr >= h) continue;
          acc.pixel(tr, tc) += bw * color;
          weight(tr, tc, 0) += bw;
        }
      }
    }
  }

  WarpResult result;
  result.height = h;
  result.width = w;
  result.warped = Image(h, w, 3);
  result.weight = weight;
  result.mask.assign(std::size_t(h) * w, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double wt = weight(r, c, 0);
      if (wt > opts.weight_threshold && dst.coverage(r, c, 0) >= kCoverageThreshold) {
        result.mask[std::size_t(r) * w + c] = 1;
        result.warped.pixel(r, c) = acc.pixel(r, c) / wt;
      }
    }
  }
  return result;
}

double consistency_score(const Image& a, const Image& b, const PixelMask& mask, const FeatureExtractor& fx,
                         ScoreMode mode) {
  if (!a.same_shape(b)) throw ValidationError("consistency_score inputs differ in shape");
  if (mask.size() != std::size_t(a.pixel_count())) throw ValidationError("mask size does not match the images");
  if (mode == ScoreMode::rmse) {
    double sum = 0.0;
    long count = 0;
    for (Eigen::Index p = 0; p < a.pixel_count(); ++p) {
      if (!mask[std::size_t(p)]) continue;
      sum += (a.data().row(p) - b.data().row(p)).squaredNorm();
      ++count;
    }
    if (count == 0) throw DegenerateError("empty mask: consistency score undefined");
    return std::sqrt(sum / double(count * a.channels()));
  }

  Image filled = a;
  for (Eigen::Index p = 0; p < a.pixel_count(); ++p) {
    if (!mask[std::size_t(p)]) filled.data().row(p) = b.data().row(p);
  }
  const FeatureMap fa = fx.extract(filled), fb = fx.extract(b);
  const int s = fx.stride();
  double sum = 0.0;
  long cells = 0;
  for (int r = 0; r < fa.height(); ++r) {
    for (int c = 0; c < fa.width(); ++c) {
      int masked = 0;
      for (int dr = 0; dr < s; ++dr) {
        for (int dc = 0; dc < s; ++dc) masked += mask[std::size_t(r * s + dr) * a.width() + (c * s + dc)] ? 1 : 0;
      }
      if (2 * masked <= s * s) continue;
      sum += (fa.features.pixel(r, c) - fb.features.pixel(r, c)).squaredNorm();
      ++cells;
    }
  }
  if (cells == 0) throw DegenerateError("no majority-masked feature cells: feature score undefined");
  return std::sqrt(sum / double(cells * fa.dim()));
}

Eigen::MatrixXd gram_matrix(const FeatureMap& f) {
  const auto& m = f.features.data();
  return (m.transpose() * m) / double(m.rows());
}

double gram_style_loss(const FeatureMap& a, const FeatureMap& b) {
  if (a.dim() != b.dim()) throw ValidationError("Gram loss needs equal feature dimensions");
  return (gram_matrix(a) - gram_matrix(b)).squaredNorm();
}

double content_loss(const FeatureMap& a, const FeatureMap& b) {
  if (!a.features.same_shape(b.features)) throw ValidationError("content loss needs equally shaped feature maps");
  return (a.features.data() - b.features.data()).squaredNorm() / double(a.features.data().size());
}

PerceptualMetrics perceptual_metrics(const Image& img, const Image& style, const Image& content_ref,
                                     const FeatureExtractor& fx) {
  if (!img.same_shape(content_ref)) throw ValidationError("content reference size does not match the image");
  const FeatureMap fi = fx.extract(img);
  return {gram_style_loss(fi, fx.extract(style)), content_loss(fi, fx.extract(content_ref))};
}

ConsistencyReport consistency_report(const GaussianScene& scene, std::span<const Camera> cameras,
                                     const FeatureExtractor& fx, const RenderOptions& opts,
                                     const WarpOptions& warp) {
  const int n = int(cameras.size());
  if (n < 2) throw ValidationError("consistency report needs at least two cameras");
  std::vector<RenderOutput> renders;
  renders.reserve(n);
  for (const auto& cam : cameras) renders.push_back(render(scene, cam, opts));

  ConsistencyReport rep;
  auto score = [&](int a, int b, bool long_range) {
    PairScore ps{a, b, long_range, 0, 0.0, 0.0, false};
    const WarpResult wr = warp_view(renders[a], cameras[a], cameras[b], renders[b], warp);
    ps.covisible = wr.covisible();
    if (ps.covisible > 0) {
      ps.rmse = consistency_score(wr.warped, renders[b].color, wr.mask, fx, ScoreMode::rmse);
      try {
        ps.feature_rmse = consistency_score(wr.warped, renders[b].color, wr.mask, fx, ScoreMode::feature);
        ps.feature_defined = true;
      } catch (const DegenerateError&) {
      }
    }
    rep.pairs.push_back(ps);
  };
  for (int i = 0; i + 1 < n; ++i) score(i, i + 1, false);
  for (int i = 0; i < n; ++i) {
    int far = -1;
    double best = -1.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (cameras[j].position - cameras[i].position).norm();
      if (d > best) {
        best = d;
        far = j;
      }
    }
    score(i, far, true);
  }
  for (const auto& p : rep.pairs) {
    if (p.covisible == 0) continue;
    RangeSummary& s = p.long_range ? rep.long_range : rep.short_range;
    s.rmse += p.rmse;
    ++s.pairs;
    if (p.feature_defined) {
      s.feature_rmse += p.feature_rmse;
      ++s.feature_pairs;
    }
  }
  for (RangeSummary* s : {&rep.short_range, &rep.long_range}) {
    if (s->pairs > 0) s->rmse /= s->pairs;
    if (s->feature_pairs > 0) s->feature_rmse /= s->feature_pairs;
  }
  return rep;
}

KeyViewConsistency key_view_consistency(std::span<const Image> stylized, std::span<const RenderOutput> renders,
                                        std::span<const Camera> cameras, std::span<const GroupIdentityMap> ids,
                                        const FeatureExtractor& fx) {
  const std::size_t k = stylized.size();
  if (renders.size() != k || cameras.size() != k || ids.size() != k) {
    throw ValidationError("key view consistency needs one render, camera and group map per view");
  }
  KeyViewConsistency out;
  int groups = 0;
  for (const auto& m : ids) {
    for (int id : m.ids) groups = std::max(groups, id + 1);
  }
  std::vector<FeatureMap> features;
  std::vector<GroupIdentityMap> cells;
  for (std::size_t v = 0; v < k; ++v) {
    features.push_back(fx.extract(stylized[v]));
    cells.push_back(downsample_group_map(ids[v], fx.stride()));
  }
  auto group_mean = [&](std::size_t v, int g, Eigen::RowVectorXd& mean) {
    mean = Eigen::RowVectorXd::Zero(features[v].dim());
    int count = 0;
    for (std::size_t p = 0; p < cells[v].ids.size(); ++p) {
      if (cells[v].ids[p] != g) continue;
      mean += features[v].features.data().row(Eigen::Index(p));
      ++count;
    }
    if (count > 0) mean /= count;
    return count > 0;
  };

  double warp_sum = 0.0, inst_sum = 0.0;
  int warp_pairs = 0, inst_pairs = 0;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      if (a == b) continue;
      RenderOutput src = renders[a];
      src.color = stylized[a];
      const WarpResult wr = warp_view(src, cameras[a], cameras[b], renders[b]);
      if (wr.covisible() > 0) {
        warp_sum += consistency_score(wr.warped, stylized[b], wr.mask, fx, ScoreMode::rmse);
        ++warp_pairs;
      }
      if (b < a) continue;
      for (int g = 0; g < groups; ++g) {
        Eigen::RowVectorXd ma, mb;
        if (group_mean(a, g, ma) && group_mean(b, g, mb)) {
          inst_sum += (ma - mb).norm();
          ++inst_pairs;
        }
      }
    }
  }
  out.pairs = warp_pairs;
  out.warp_rmse = warp_pairs > 0 ? warp_sum / warp_pairs : 0.0;
  out.instance_feature_distance = inst_pairs > 0 ? inst_sum / inst_pairs : 0.0;
  return out;
}

}  // namespace stylesplat
