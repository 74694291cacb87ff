#include "stylesplat/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace stylesplat {

namespace {

Eigen::Matrix3d quaternion_matrix(const Vec4& q) {
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized().toRotationMatrix();
}

Vec3 hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = int(hh);
  const double f = hh - sector;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Vec4 random_rotation(Rng& rng) {
  Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  while (q.norm() < 1e-6) q = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized();
}

Vec3 jittered_color(const Vec3& base, Rng& rng) {
  Vec3 c;
  for (int k = 0; k < 3; ++k) c[k] = std::clamp(base[k] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  return c;
}

IdVec identity_encoding(int group, Rng& rng) {
  IdVec e;
  for (int k = 0; k < kIdDim; ++k) e[k] = rng.uniform(-0.09, 0.09);
  e[group] += 10.0;
  return e;
}

// One box per group on a square grid. Gaussians are flat disks lying on the box
// faces, the way optimized splats concentrate on surfaces.
void fill_blocks(GaussianScene& scene, int n, int k, Rng& rng, const std::vector<Vec3>& palette) {
  const int cols = int(std::ceil(std::sqrt(double(k))));
  const int rows = (k + cols - 1) / cols;
  std::vector<Vec3> centers(k), half(k);
  std::vector<int> per_group(k, 0);
  for (int i = 0; i < n; ++i) ++per_group[std::size_t(std::int64_t(i) * k / n)];
  for (int g = 0; g < k; ++g) {
    const int row = g / cols, col = g % cols;
    half[g] = Vec3(0.35, 0.2 + 0.2 * rng.uniform(), 0.35);
    centers[g] = Vec3((col - 0.5 * (cols - 1)) * 1.0, half[g].y() - 0.3, (row - 0.5 * (rows - 1)) * 1.0);
  }
  for (int i = 0; i < n; ++i) {
    const int g = int(std::int64_t(i) * k / n);
    const Vec3& h = half[g];
    // Face areas for axes x, y, z (two faces each).
    const Vec3 area(h.y() * h.z(), h.x() * h.z(), h.x() * h.y());
    const double total = 2.0 * 4.0 * area.sum();
    const double spacing = std::sqrt(total / std::max(1, per_group[g]));
    double pick = rng.uniform() * area.sum();
    int axis = 0;
    while (axis < 2 && pick >= area[axis]) pick -= area[axis++];
    Gaussian ga;
    for (int a = 0; a < 3; ++a) ga.mu[a] = centers[g][a] + rng.uniform(-h[a], h[a]);
    ga.mu[axis] = centers[g][axis] + (rng.uniform() < 0.5 ? -h[axis] : h[axis]);
    const double tangent = std::clamp(1.0 * spacing, 0.02, 0.2) * rng.uniform(0.9, 1.1);
    ga.scale = Vec3::Constant(tangent);
    ga.scale[axis] = 0.01;
    ga.rot = Vec4(1, 0, 0, 0);
    ga.opacity = rng.uniform(0.9, 1.0);
    ga.color = jittered_color(palette[g], rng);
    ga.id_enc = identity_encoding(g, rng);
    scene.gaussians.push_back(ga);
  }
}

// Fronto-parallel plane at z = 0 spanning [-1, 1]^2. Gaussians are laid out column
// by column so contiguous index ranges (hence groups) form vertical strips.
void fill_plane(GaussianScene& scene, int n, int k, Rng& rng, const std::vector<Vec3>& palette) {
  const int m = std::max(1, int(std::ceil(std::sqrt(double(n)))));
  const double spacing = 2.0 / m;
  for (int i = 0; i < n; ++i) {
    const int g = int(std::int64_t(i) * k / n);
    const int col = i / m, row = i % m;
    Gaussian ga;
    ga.mu = Vec3(-1.0 + (col + 0.5) * spacing + rng.uniform(-0.1, 0.1) * spacing,
                 -1.0 + (row + 0.5) * spacing + rng.uniform(-0.1, 0.1) * spacing, 0.0);
    ga.scale = Vec3(0.6 * spacing, 0.6 * spacing, 0.01);
    ga.rot = Vec4(1, 0, 0, 0);
    ga.opacity = 0.9;
    Vec3 shade = palette[g] + Vec3::Constant(0.1 * ga.mu.y());
    ga.color = jittered_color(shade.cwiseMax(0.0).cwiseMin(1.0), rng);
    ga.id_enc = identity_encoding(g, rng);
    scene.gaussians.push_back(ga);
  }
}

void fill_orbit_clutter(GaussianScene& scene, int n, int k, Rng& rng, const std::vector<Vec3>& palette) {
  std::vector<Vec3> centers(k);
  for (auto& c : centers) {
    do {
      c = Vec3(rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9));
    } while (c.norm() > 0.9);
  }
  for (int i = 0; i < n; ++i) {
    const int g = int(std::int64_t(i) * k / n);
    Gaussian ga;
    for (int a = 0; a < 3; ++a) ga.mu[a] = centers[g][a] + 0.2 * rng.normal();
    for (int a = 0; a < 3; ++a) ga.scale[a] = rng.uniform(0.04, 0.08);
    ga.rot = random_rotation(rng);
    ga.opacity = rng.uniform(0.6, 0.95);
    ga.color = jittered_color(palette[g], rng);
    ga.id_enc = identity_encoding(g, rng);
    scene.gaussians.push_back(ga);
  }
}

bool unit_norm(const Vec4& q) { return std::abs(q.norm() - 1.0) <= 1e-6; }

void append(std::vector<Violation>& out, int index, std::string invariant, std::string message) {
  out.push_back({index, std::move(invariant), std::move(message)});
}

std::string describe(const std::vector<Violation>& vs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < vs.size() && i < 8; ++i) {
    if (i) os << "; ";
    if (vs[i].gaussian >= 0) os << "gaussian " << vs[i].gaussian << ": ";
    os << vs[i].invariant << " (" << vs[i].message << ")";
  }
  if (vs.size() > 8) os << "; ... " << vs.size() - 8 << " more";
  return os.str();
}

}  // namespace

Eigen::Matrix3d Gaussian::rotation() const { return quaternion_matrix(rot); }

Eigen::Matrix3d Gaussian::covariance() const {
  const Eigen::Matrix3d rs = rotation() * scale.asDiagonal();
  return rs * rs.transpose();
}

Eigen::Matrix3d Camera::rotation() const { return quaternion_matrix(rot); }

double Camera::focal() const {
  return 0.5 * height / std::tan(0.5 * fov_y * std::numbers::pi / 180.0);
}

Vec3 Camera::world_to_camera(const Vec3& p) const { return rotation().transpose() * (p - position); }

Vec3 Camera::camera_to_world(const Vec3& p) const { return rotation() * p + position; }

GaussianScene make_scene(std::string_view preset, int n_gaussians, int n_groups, std::uint64_t seed) {
  if (preset != "blocks" && preset != "plane" && preset != "orbit-clutter") {
    throw ConfigError("unknown scene preset '" + std::string(preset) + "'");
  }
  if (n_gaussians < 1) throw ValidationError("n_gaussians must be >= 1");
  if (n_groups < 1) throw ValidationError("n_groups must be >= 1");
  if (n_groups > kIdDim) throw ValidationError("n_groups must be <= 16 (identity encoding length)");

  GaussianScene scene;
  scene.n_groups = n_groups;
  scene.seed = seed;
  scene.background = Vec3(0.1, 0.1, 0.1);
  scene.gaussians.reserve(n_gaussians);

  Rng rng(derive_seed(seed, std::string("scene/") + std::string(preset)));
  std::vector<Vec3> palette(n_groups);
  for (int g = 0; g < n_groups; ++g) palette[g] = hsv_to_rgb(double(g) / n_groups + 0.02, 0.65, 0.85);

  if (preset == "blocks") {
    fill_blocks(scene, n_gaussians, n_groups, rng, palette);
  } else if (preset == "plane") {
    fill_plane(scene, n_gaussians, n_groups, rng, palette);
  } else {
    fill_orbit_clutter(scene, n_gaussians, n_groups, rng, palette);
  }
  return scene;
}

int encoded_group(const Gaussian& g) {
  Eigen::Index best = 0;
  g.id_enc.maxCoeff(&best);
  return int(best);
}

std::vector<Violation> validate_scene(const GaussianScene& scene) {
  std::vector<Violation> out;
  if (scene.n_groups < 1 || scene.n_groups > kIdDim) {
    append(out, -1, "n_groups", "must lie in [1, 16]");
  }
  if (!scene.background.allFinite()) append(out, -1, "background", "non-finite");
  for (int i = 0; i < int(scene.gaussians.size()); ++i) {
    const Gaussian& g = scene.gaussians[i];
    if (!g.mu.allFinite()) append(out, i, "mu", "non-finite");
    if (!g.rot.allFinite() || !unit_norm(g.rot)) append(out, i, "quaternion norm", "|q| must be within 1e-6 of 1");
    if (!g.scale.allFinite() || (g.scale.array() <= 0.0).any()) {
      append(out, i, "scale", "components must be strictly positive");
    }
    if (!std::isfinite(g.opacity) || g.opacity <= 0.0 || g.opacity > 1.0) {
      append(out, i, "opacity", "must lie in (0, 1]");
    }
    if (!g.color.allFinite() || (g.color.array() < 0.0).any() || (g.color.array() > 1.0).any()) {
      append(out, i, "color", "components must lie in [0, 1]");
    }
    if (!g.id_enc.allFinite()) {
      append(out, i, "id_enc", "non-finite");
    } else if (encoded_group(g) >= scene.n_groups) {
      append(out, i, "group index", "argmax of id_enc must be < n_groups");
    }
  }
  return out;
}

std::vector<Violation> validate_camera(const Camera& cam) {
  std::vector<Violation> out;
  if (!cam.position.allFinite()) append(out, -1, "camera position", "non-finite");
  if (!cam.rot.allFinite() || !unit_norm(cam.rot)) append(out, -1, "camera rotation", "quaternion must be unit");
  if (!(cam.fov_y > 0.0 && cam.fov_y < 180.0)) append(out, -1, "fov_y", "must lie in (0, 180)");
  if (cam.width < 1 || cam.height < 1) append(out, -1, "resolution", "width and height must be >= 1");
  if (!(cam.near > 0.0 && cam.near < cam.far)) append(out, -1, "clip planes", "need 0 < near < far");
  return out;
}

std::vector<Violation> validate_view_set(const ViewSet& views) {
  std::vector<Violation> out;
  for (const auto& cam : views.cameras) {
    auto v = validate_camera(cam);
    out.insert(out.end(), v.begin(), v.end());
  }
  std::vector<int> sorted = views.key_indices;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    append(out, -1, "key_indices", "must be unique");
  }
  for (int k : sorted) {
    if (k < 0 || k >= int(views.cameras.size())) append(out, -1, "key_indices", "index out of range");
  }
  return out;
}

void require_valid(const GaussianScene& scene) {
  auto vs = validate_scene(scene);
  if (!vs.empty()) throw ValidationError("invalid scene: " + describe(vs));
}

void require_valid(const Camera& cam) {
  auto vs = validate_camera(cam);
  if (!vs.empty()) throw ValidationError("invalid camera: " + describe(vs));
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y, int width, int height,
               double near, double far) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.cross(Vec3::UnitX());
  right.normalize();
  const Vec3 down = forward.cross(right);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  const Eigen::Quaterniond q(r);
  Camera cam;
  cam.position = eye;
  cam.rot = Vec4(q.w(), q.x(), q.y(), q.z()).normalized();
  cam.fov_y = fov_y;
  cam.width = width;
  cam.height = height;
  cam.near = near;
  cam.far = far;
  return cam;
}

std::vector<Camera> orbit_cameras(int n, double radius, double height, double fov_y, int width, int height_px) {
  if (n < 1) throw ValidationError("orbit needs at least one camera");
  std::vector<Camera> cams;
  cams.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double theta = 2.0 * std::numbers::pi * i / n;
    const Vec3 eye(radius * std::cos(theta), height, radius * std::sin(theta));
    cams.push_back(look_at(eye, Vec3::Zero(), Vec3::UnitY(), fov_y, width, height_px));
  }
  return cams;
}

}  // namespace stylesplat
