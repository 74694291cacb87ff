#pragma once

#include "stylesplat/splat.hpp"

#include <string>
#include <utility>
#include <vector>

namespace stylesplat {

inline constexpr int kBackground = -1;
inline constexpr unsigned char kBackgroundPng = 255;

/// Linear map from composited identity features to K logits, followed by softmax.
struct IdentityClassifier {
  Eigen::MatrixXd weight;  // K x 16
  Eigen::VectorXd bias;    // K

  int groups() const { return int(weight.rows()); }

  /// Takes the first K coordinates of the identity feature.
  static IdentityClassifier identity_embedding(int k);
};

/// Per-pixel group labels in [0, K) or kBackground.
struct GroupIdentityMap {
  int height = 0;
  int width = 0;
  std::vector<int> ids;
  std::string source;

  int at(int r, int c) const { return ids[std::size_t(r) * width + c]; }
};

struct PixelCoord {
  int row;
  int col;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
  friend auto operator<=>(const PixelCoord&, const PixelCoord&) = default;
};

/// groups[i] lists the pixels with identity i in row-major order.
struct GroupSet {
  int height = 0;
  int width = 0;
  std::vector<std::vector<PixelCoord>> groups;

  int k() const { return int(groups.size()); }
};

/// One key view's side of the group matching: for each identity i, the group y_i it
/// maps to, or kGlobal when y_i is empty.
struct ViewMatching {
  static constexpr int kGlobal = -1;
  std::vector<int> target;

  bool is_global(int i) const { return target[i] == kGlobal; }
};

/// Matching of every training-view identity against each key view.
struct GroupMatching {
  std::vector<ViewMatching> views;
};

GroupIdentityMap classify_identity(const Image& id_features, const IdentityClassifier& clf, const Image& coverage,
                                   std::string source = {});

GroupIdentityMap render_identity_map(const GaussianScene& scene, const Camera& cam, const IdentityClassifier& clf,
                                     const RenderOptions& opts = {});

GroupSet build_group_sets(const GroupIdentityMap& map, int k);

/// Maps x_i to y_i when y_i is nonempty and to the union of all key-view groups otherwise.
ViewMatching match_groups(const GroupSet& x, const GroupSet& y);
GroupMatching match_groups(const GroupSet& x, const std::vector<GroupSet>& ys);

/// Majority vote over stride x stride blocks. Ties go to the lowest id; background
/// wins only with a strict majority.
GroupIdentityMap downsample_group_map(const GroupIdentityMap& map, int stride);

/// PNG-ready labels with background stored as 255.
std::vector<unsigned char> group_map_bytes(const GroupIdentityMap& map);

}  // namespace stylesplat
