#pragma once

#include "stylesplat/core.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace stylesplat {

inline constexpr int kIdDim = 16;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using IdVec = Eigen::Matrix<double, kIdDim, 1>;

/// One anisotropic 3D Gaussian. Covariance is stored factored as R S S^T R^T.
struct Gaussian {
  Vec3 mu = Vec3::Zero();
  Vec3 scale = Vec3::Constant(0.1);  // per-axis standard deviations
  Vec4 rot = Vec4(1, 0, 0, 0);       // unit quaternion (w, x, y, z)
  double opacity = 1.0;
  Vec3 color = Vec3::Zero();
  IdVec id_enc = IdVec::Zero();

  Eigen::Matrix3d rotation() const;
  Eigen::Matrix3d covariance() const;
};

struct GaussianScene {
  std::vector<Gaussian> gaussians;
  Vec3 background = Vec3::Zero();
  int n_groups = 1;
  std::uint64_t seed = 0;
};

/// Pinhole camera. `rot` is the camera-to-world rotation as (w, x, y, z); camera
/// axes are x right, y down, z forward. The principal point is the image center
/// and pixel (r, c) has its center at (c + 0.5, r + 0.5).
struct Camera {
  Vec3 position = Vec3::Zero();
  Vec4 rot = Vec4(1, 0, 0, 0);
  double fov_y = 60.0;  // degrees
  int width = 64;
  int height = 64;
  double near = 0.01;
  double far = 100.0;

  Eigen::Matrix3d rotation() const;
  double focal() const;
  Vec2 principal_point() const { return {0.5 * width, 0.5 * height}; }
  Vec3 world_to_camera(const Vec3& p) const;
  Vec3 camera_to_world(const Vec3& p) const;
};

struct ViewSet {
  std::vector<Camera> cameras;
  std::vector<int> key_indices;
};

struct Violation {
  int gaussian = -1;  // -1 for scene-level violations
  std::string invariant;
  std::string message;
};

/// Presets: "blocks", "plane", "orbit-clutter".
///
/// Gaussian i belongs to cluster floor(i * n_groups / n_gaussians); its identity
/// encoding is 10 * onehot(cluster) plus jitter bounded by 0.09 per coordinate.
GaussianScene make_scene(std::string_view preset, int n_gaussians, int n_groups, std::uint64_t seed);

std::vector<Violation> validate_scene(const GaussianScene& scene);
std::vector<Violation> validate_camera(const Camera& cam);
std::vector<Violation> validate_view_set(const ViewSet& views);

/// Throws ValidationError listing every violation.
void require_valid(const GaussianScene& scene);
void require_valid(const Camera& cam);

/// Ground-truth group of a Gaussian, recovered by argmax of its identity encoding.
int encoded_group(const Gaussian& g);

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y, int width, int height,
               double near = 0.01, double far = 100.0);

/// n cameras evenly spaced on a horizontal circle, all looking at the origin.
std::vector<Camera> orbit_cameras(int n, double radius, double height, double fov_y, int width, int height_px);

}  // namespace stylesplat
