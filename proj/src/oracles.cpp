#include "stylesplat/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <tuple>

namespace stylesplat::oracle {

namespace {

Eigen::Matrix3d quat_to_matrix(Vec4 q) {
  q /= q.norm();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

struct Projected {
  double u, v, depth;
  double a, b, c;  // inverse covariance entries [[a, b], [b, c]]
  double zu, zv;   // screen/depth cross-covariance
  double opacity;
  int index;
};

}  // namespace

RenderOutput brute_force_render(const GaussianScene& scene, const Camera& cam) {
  const Eigen::Matrix3d cam_rot = quat_to_matrix(cam.rot);
  const double focal = cam.height / (2.0 * std::tan(cam.fov_y * std::numbers::pi / 360.0));

  std::vector<Projected> proj;
  for (int i = 0; i < int(scene.gaussians.size()); ++i) {
    const Gaussian& g = scene.gaussians[i];
    const Vec3 p = cam_rot.transpose() * (g.mu - cam.position);
    if (p.z() <= cam.near || p.z() > cam.far) continue;
    const Eigen::Matrix3d rg = quat_to_matrix(g.rot);
    Eigen::Matrix3d s2 = Eigen::Matrix3d::Zero();
    for (int k = 0; k < 3; ++k) s2(k, k) = g.scale[k] * g.scale[k];
    const Eigen::Matrix3d sigma_cam = cam_rot.transpose() * (rg * s2 * rg.transpose()) * cam_rot;
    Eigen::Matrix<double, 2, 3> j;
    j << focal / p.z(), 0, -focal * p.x() / (p.z() * p.z()), 0, focal / p.z(), -focal * p.y() / (p.z() * p.z());
    const Eigen::Matrix2d cov = j * sigma_cam * j.transpose();
    const double sxx = cov(0, 0) + 0.3, syy = cov(1, 1) + 0.3, sxy = 0.5 * (cov(0, 1) + cov(1, 0));
    const double det = sxx * syy - sxy * sxy;
    const Eigen::Vector2d cross = j * sigma_cam.col(2);
    proj.push_back({focal * p.x() / p.z() + cam.width / 2.0, focal * p.y() / p.z() + cam.height / 2.0, p.z(),
                    syy / det, -sxy / det, sxx / det, cross.x(), cross.y(), g.opacity, i});
  }

  RenderOutput out;
  out.color = Image(cam.height, cam.width, 3);
  out.depth = Image(cam.height, cam.width, 1);
  out.id_features = Image(cam.height, cam.width, kIdDim);
  out.coverage = Image(cam.height, cam.width, 1);
  std::vector<std::tuple<double, int, double, double>> hits;
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      hits.clear();
      for (const auto& s : proj) {
        const double dx = c + 0.5 - s.u, dy = r + 0.5 - s.v;
        const double power = s.a * dx * dx + 2.0 * s.b * dx * dy + s.c * dy * dy;
        const double alpha = std::min(0.99, s.opacity * std::exp(-0.5 * power));
        // Conditional mean depth of the Gaussian given this screen position.
        const double gu = s.a * dx + s.b * dy, gv = s.b * dx + s.c * dy;
        hits.emplace_back(s.depth, s.index, alpha, s.depth + s.zu * gu + s.zv * gv);
      }
      std::sort(hits.begin(), hits.end(), [](const auto& x, const auto& y) {
        return std::tie(std::get<0>(x), std::get<1>(x)) < std::tie(std::get<0>(y), std::get<1>(y));
      });
      double t = 1.0, cov = 0.0, depth = 0.0;
      Vec3 color = Vec3::Zero();
      IdVec id = IdVec::Zero();
      for (const auto& [d, idx, alpha, pixel_depth] : hits) {
        const double w = alpha * t;
        color += w * scene.gaussians[idx].color;
        id += w * scene.gaussians[idx].id_enc;
        depth += w * pixel_depth;
        cov += w;
        t *= 1.0 - alpha;
      }
      for (int k = 0; k < 3; ++k) out.color(r, c, k) = color[k] + (1.0 - cov) * scene.background[k];
      for (int k = 0; k < kIdDim; ++k) out.id_features(r, c, k) = id[k];
      out.coverage(r, c, 0) = cov;
      out.depth(r, c, 0) = cov < 1e-4 ? 0.0 : depth / cov;
    }
  }
  return out;
}

GroupIdentityMap brute_force_identity_map(const GaussianScene& scene, const Camera& cam) {
  const RenderOutput out = brute_force_render(scene, cam);
  GroupIdentityMap map;
  map.height = cam.height;
  map.width = cam.width;
  map.ids.assign(std::size_t(cam.height) * cam.width, kBackground);
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      if (out.coverage(r, c, 0) < 1e-4) continue;
      int best = 0;
      for (int k = 1; k < scene.n_groups; ++k) {
        if (out.id_features(r, c, k) > out.id_features(r, c, best)) best = k;
      }
      map.ids[std::size_t(r) * cam.width + c] = best;
    }
  }
  return map;
}

double global_nnfm(const FeatureMap& query, std::span<const FeatureMap> keys, const GroupIdentityMap& query_ids,
                   std::span<const GroupIdentityMap> key_ids) {
  double sum = 0.0;
  int n = 0;
  for (int p = 0; p < int(query_ids.ids.size()); ++p) {
    if (query_ids.ids[p] == kBackground) continue;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < keys.size(); ++s) {
      for (int q = 0; q < int(key_ids[s].ids.size()); ++q) {
        if (key_ids[s].ids[q] == kBackground) continue;
        const auto a = query.features.data().row(p);
        const auto b = keys[s].features.data().row(q);
        const double d = 1.0 - a.dot(b) / std::max(a.norm() * b.norm(), 1e-12);
        best = std::min(best, d);
      }
    }
    sum += best;
    ++n;
  }
  return n ? sum / n : 0.0;
}

RowMatrix<double> dense_attention(const AttentionBlock& blk, const RowMatrix<double>& z,
                                  const RowMatrix<double>& context) {
  const int d = blk.head_dim(), din = blk.input_dim();
  const int nq = int(z.rows()), nk = int(context.rows());
  auto project = [&](const RowMatrix<double>& x, const RowMatrix<double>& w) {
    RowMatrix<double> out = RowMatrix<double>::Zero(x.rows(), d);
    for (int i = 0; i < x.rows(); ++i) {
      for (int j = 0; j < d; ++j) {
        for (int k = 0; k < din; ++k) out(i, j) += x(i, k) * w(k, j);
      }
    }
    return out;
  };
  const RowMatrix<double> q = project(z, blk.wq), k = project(context, blk.wk), v = project(context, blk.wv);
  RowMatrix<double> out = RowMatrix<double>::Zero(nq, d);
  for (int i = 0; i < nq; ++i) {
    std::vector<double> s(nk);
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < nk; ++j) {
      double dot = 0.0;
      for (int m = 0; m < d; ++m) dot += q(i, m) * k(j, m);
      s[j] = dot / std::sqrt(double(d));
      mx = std::max(mx, s[j]);
    }
    double total = 0.0;
    for (auto& x : s) total += (x = std::exp(x - mx));
    for (int j = 0; j < nk; ++j) {
      for (int m = 0; m < d; ++m) out(i, m) += s[j] / total * v(j, m);
    }
  }
  return out;
}

double best_subset_spread(std::span<const Vec3> positions, int k) {
  const int n = int(positions.size());
  double best = -1.0;
  // Enumerate subsets by bitmask; fine for the small camera counts used in tests.
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != k) continue;
    double spread = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (!(mask >> i & 1u)) continue;
      for (int j = i + 1; j < n; ++j) {
        if (mask >> j & 1u) spread = std::min(spread, (positions[i] - positions[j]).norm());
      }
    }
    best = std::max(best, spread);
  }
  return best;
}

}  // namespace stylesplat::oracle
