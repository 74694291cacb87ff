#pragma once

#include "stylesplat/scene.hpp"

#include <optional>

namespace stylesplat {

inline constexpr double kDilation = 0.3;            // px^2 added to every projected covariance
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kFalloffCutoff = 1.0 / 255.0;
inline constexpr double kCoverageThreshold = 1e-4;  // tau_cov
inline constexpr double kFootprintChi2 = 9.21034037197618;  // 99th percentile of chi^2 with 2 dof

/// EWA linearization of a camera-space covariance at camera-space point p:
/// J W Sigma W^T J^T. `w` is the world-to-camera rotation.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 2> project_covariance(const Eigen::Matrix<Scalar, 3, 3>& cov_world,
                                               const Eigen::Matrix<Scalar, 3, 3>& w,
                                               const Eigen::Matrix<Scalar, 3, 1>& p, Scalar focal) {
  Eigen::Matrix<Scalar, 2, 3> j;
  const Scalar inv_z = Scalar(1) / p.z();
  j << focal * inv_z, Scalar(0), -focal * p.x() * inv_z * inv_z,  //
      Scalar(0), focal * inv_z, -focal * p.y() * inv_z * inv_z;
  const Eigen::Matrix<Scalar, 2, 3> t = j * w;
  return t * cov_world * t.transpose();
}

struct Splat2D {
  Vec2 center = Vec2::Zero();          // pixels
  Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d conic = Eigen::Matrix2d::Identity();  // cov2d^-1
  double depth = 0.0;                  // camera-space z of mu
  /// d(expected z)/d(pixel offset): the Gaussian's depth conditioned on the screen
  /// position is depth + depth_slope . (pixel - center).
  Vec2 depth_slope = Vec2::Zero();
  int gaussian_index = -1;
};

struct RenderOptions {
  /// When false, the 1/255 falloff cutoff and all footprint culling are disabled
  /// (every splat in front of the near plane touches every pixel).
  bool falloff_cutoff = true;
  int workers = 1;
  int tile_size = 16;
};

/// Per-view render channels; every image is height x width.
struct RenderOutput {
  Image color;        // 3 channels, background composited
  Image depth;        // 1 channel, weight-normalized splat depth at the pixel; 0 where coverage < tau_cov
  Image id_features;  // 16 channels
  Image coverage;     // 1 channel, sum of compositing weights

  int height() const { return color.height(); }
  int width() const { return color.width(); }
};

/// Per-Gaussian gradients. Rows are Gaussians.
struct ColorGradient {
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> color;
  Eigen::Matrix<double, Eigen::Dynamic, kIdDim, Eigen::RowMajor> id_enc;
};

/// Empty when mu is in front of the near plane / beyond the far plane, or when the
/// 99th-percentile footprint misses the image.
std::optional<Splat2D> project_gaussian(const Gaussian& g, const Camera& cam, int index = 0);

/// Projection without footprint culling; only the clip planes apply.
std::optional<Splat2D> project_gaussian_unculled(const Gaussian& g, const Camera& cam, int index = 0);

RenderOutput render(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts = {});

/// Adjoint of the compositing sums with respect to colors (3-channel upstream) or
/// identity encodings (16-channel upstream). Geometry, opacity and background are frozen.
ColorGradient render_backward(const GaussianScene& scene, const Camera& cam, const Image& upstream,
                              const RenderOptions& opts = {});

}  // namespace stylesplat
