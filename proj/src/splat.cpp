#include "stylesplat/splat.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace stylesplat {

namespace {

const double kCutoffChi2 = 2.0 * std::log(255.0);  // exp(-q/2) >= 1/255  <=>  q <= 2 ln 255

struct PixelBox {
  int c0, c1, r0, r1;  // inclusive
};

// Depth-sorted splats of one view together with their tile bins.
struct PreparedView {
  std::vector<Splat2D> splats;
  std::vector<double> opacity;
  std::vector<std::vector<int>> tiles;
  int tiles_x = 0;
  int tiles_y = 0;
  int tile = 16;
  int width = 0;
  int height = 0;
  bool cutoff = true;
};

PixelBox pixel_box(const Splat2D& s, const Camera& cam, bool cutoff) {
  if (!cutoff) return {0, cam.width - 1, 0, cam.height - 1};
  const double ex = std::sqrt(kCutoffChi2 * s.cov2d(0, 0));
  const double ey = std::sqrt(kCutoffChi2 * s.cov2d(1, 1));
  PixelBox b;
  b.c0 = std::max(0, int(std::ceil(s.center.x() - ex - 0.5)));
  b.c1 = std::min(cam.width - 1, int(std::floor(s.center.x() + ex - 0.5)));
  b.r0 = std::max(0, int(std::ceil(s.center.y() - ey - 0.5)));
  b.r1 = std::min(cam.height - 1, int(std::floor(s.center.y() + ey - 0.5)));
  return b;
}

PreparedView prepare(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts) {
  require_valid(scene);
  require_valid(cam);
  if (opts.tile_size < 1) throw ValidationError("tile_size must be >= 1");

  PreparedView view;
  view.width = cam.width;
  view.height = cam.height;
  view.cutoff = opts.falloff_cutoff;
  view.tile = opts.tile_size;
  for (int i = 0; i < int(scene.gaussians.size()); ++i) {
    auto s = opts.falloff_cutoff ? project_gaussian(scene.gaussians[i], cam, i)
                                 : project_gaussian_unculled(scene.gaussians[i], cam, i);
    if (s) view.splats.push_back(*s);
  }
  std::stable_sort(view.splats.begin(), view.splats.end(), [](const Splat2D& a, const Splat2D& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.gaussian_index < b.gaussian_index;
  });
  view.opacity.reserve(view.splats.size());
  for (const auto& s : view.splats) view.opacity.push_back(scene.gaussians[s.gaussian_index].opacity);

  view.tiles_x = (cam.width + view.tile - 1) / view.tile;
  view.tiles_y = (cam.height + view.tile - 1) / view.tile;
  view.tiles.assign(std::size_t(view.tiles_x) * view.tiles_y, {});
  for (int k = 0; k < int(view.splats.size()); ++k) {
    const PixelBox b = pixel_box(view.splats[k], cam, view.cutoff);
    if (b.c0 > b.c1 || b.r0 > b.r1) continue;
    for (int ty = b.r0 / view.tile; ty <= b.r1 / view.tile; ++ty) {
      for (int tx = b.c0 / view.tile; tx <= b.c1 / view.tile; ++tx) {
        view.tiles[std::size_t(ty) * view.tiles_x + tx].push_back(k);
      }
    }
  }
  return view;
}

// Calls fn(splat_position, weight) for every contributing splat of pixel (r, c),
// front to back. Returns the accumulated coverage.
template <typename Fn>
double composite_pixel(const PreparedView& view, const std::vector<int>& tile_list, int r, int c, Fn&& fn) {
  const double px = c + 0.5, py = r + 0.5;
  double transmittance = 1.0;
  for (int k : tile_list) {
    const Splat2D& s = view.splats[k];
    const Vec2 d(px - s.center.x(), py - s.center.y());
    const double q = d.dot(s.conic * d);
    const double falloff = std::exp(-0.5 * q);
    if (view.cutoff && falloff < kFalloffCutoff) continue;
    const double alpha = std::clamp(view.opacity[k] * falloff, 0.0, kAlphaMax);
    const double w = alpha * transmittance;
    fn(k, w);
    transmittance *= 1.0 - alpha;
  }
  return 1.0 - transmittance;
}

template <typename Fn>
void for_each_tile_row(const PreparedView& view, int workers, Fn&& fn) {
  parallel_for(view.tiles_y, workers, [&](int begin, int end, int worker) {
    for (int ty = begin; ty < end; ++ty) {
      for (int tx = 0; tx < view.tiles_x; ++tx) {
        const auto& list = view.tiles[std::size_t(ty) * view.tiles_x + tx];
        const int r_end = std::min(view.height, (ty + 1) * view.tile);
        const int c_end = std::min(view.width, (tx + 1) * view.tile);
        for (int r = ty * view.tile; r < r_end; ++r) {
          for (int c = tx * view.tile; c < c_end; ++c) fn(list, r, c, worker);
        }
      }
    }
  });
}

}  // namespace

std::optional<Splat2D> project_gaussian_unculled(const Gaussian& g, const Camera& cam, int index) {
  const Vec3 p = cam.world_to_camera(g.mu);
  if (!(p.z() > cam.near) || p.z() > cam.far) return std::nullopt;
  const double f = cam.focal();
  Splat2D s;
  s.center = Vec2(f * p.x() / p.z(), f * p.y() / p.z()) + cam.principal_point();
  const Eigen::Matrix3d w = cam.rotation().transpose();
  const Eigen::Matrix3d cov_world = g.covariance();
  s.cov2d = project_covariance<double>(cov_world, w, p, f) + kDilation * Eigen::Matrix2d::Identity();
  s.cov2d(0, 1) = s.cov2d(1, 0) = 0.5 * (s.cov2d(0, 1) + s.cov2d(1, 0));
  s.conic = s.cov2d.inverse();
  // Cross-covariance of screen position and depth under the same linearization.
  Eigen::Matrix<double, 2, 3> j;
  j << f / p.z(), 0.0, -f * p.x() / (p.z() * p.z()), 0.0, f / p.z(), -f * p.y() / (p.z() * p.z());
  s.depth_slope = s.conic * (j * (w * cov_world * w.transpose()).col(2));
  s.depth = p.z();
  s.gaussian_index = index;
  return s;
}

std::optional<Splat2D> project_gaussian(const Gaussian& g, const Camera& cam, int index) {
  auto s = project_gaussian_unculled(g, cam, index);
  if (!s) return s;
  const double ex = std::sqrt(kFootprintChi2 * s->cov2d(0, 0));
  const double ey = std::sqrt(kFootprintChi2 * s->cov2d(1, 1));
  if (s->center.x() + ex < 0.0 || s->center.x() - ex > cam.width || s->center.y() + ey < 0.0 ||
      s->center.y() - ey > cam.height) {
    return std::nullopt;
  }
  return s;
}

RenderOutput render(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts) {
  const PreparedView view = prepare(scene, cam, opts);
  RenderOutput out;
  out.color = Image(cam.height, cam.width, 3);
  out.depth = Image(cam.height, cam.width, 1);
  out.id_features = Image(cam.height, cam.width, kIdDim);
  out.coverage = Image(cam.height, cam.width, 1);

  for_each_tile_row(view, opts.workers, [&](const std::vector<int>& list, int r, int c, int) {
    Vec3 color = Vec3::Zero();
    IdVec id = IdVec::Zero();
    double depth = 0.0;
    const Vec2 pixel_center(c + 0.5, r + 0.5);
    const double coverage = composite_pixel(view, list, r, c, [&](int k, double w) {
      const Splat2D& s = view.splats[k];
      const Gaussian& g = scene.gaussians[s.gaussian_index];
      color += w * g.color;
      id += w * g.id_enc;
      depth += w * (s.depth + s.depth_slope.dot(pixel_center - s.center));
    });
    const Eigen::Index px = out.color.index(r, c);
    out.color.data().row(px) = (color + (1.0 - coverage) * scene.background).transpose();
    out.id_features.data().row(px) = id.transpose();
    out.coverage.data()(px, 0) = coverage;
    out.depth.data()(px, 0) = coverage < kCoverageThreshold ? 0.0 : depth / coverage;
  });
  return out;
}

ColorGradient render_backward(const GaussianScene& scene, const Camera& cam, const Image& upstream,
                              const RenderOptions& opts) {
  if (upstream.height() != cam.height || upstream.width() != cam.width) {
    throw ValidationError("upstream gradient resolution does not match the camera");
  }
  if (upstream.channels() != 3 && upstream.channels() != kIdDim) {
    throw ValidationError("upstream gradient must have 3 (color) or 16 (id_features) channels");
  }
  const PreparedView view = prepare(scene, cam, opts);
  const int n = int(scene.gaussians.size());
  const int channels = upstream.channels();
  const int workers = std::clamp(opts.workers, 1, std::max(1, view.tiles_y));

  std::vector<RowMatrix<double>> partial(workers, RowMatrix<double>::Zero(n, channels));
  for_each_tile_row(view, workers, [&](const std::vector<int>& list, int r, int c, int worker) {
    const auto up = upstream.pixel(r, c);
    if (up.isZero(0.0)) return;
    auto& acc = partial[worker];
    composite_pixel(view, list, r, c, [&](int k, double w) { acc.row(view.splats[k].gaussian_index) += w * up; });
  });

  RowMatrix<double> total = RowMatrix<double>::Zero(n, channels);
  for (const auto& p : partial) total += p;

  ColorGradient grad;
  grad.color.setZero(n, 3);
  grad.id_enc.setZero(n, kIdDim);
  if (channels == 3) {
    grad.color = total;
  } else {
    grad.id_enc = total;
  }
  return grad;
}

}  // namespace stylesplat
