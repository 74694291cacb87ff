#include "stylesplat/group.hpp"

#include <algorithm>
#include <cmath>

namespace stylesplat {

IdentityClassifier IdentityClassifier::identity_embedding(int k) {
  if (k < 1 || k > kIdDim) throw ValidationError("identity embedding needs 1 <= K <= 16");
  IdentityClassifier clf;
  clf.weight = Eigen::MatrixXd::Zero(k, kIdDim);
  clf.weight.leftCols(k).setIdentity();
  clf.bias = Eigen::VectorXd::Zero(k);
  return clf;
}

GroupIdentityMap classify_identity(const Image& id_features, const IdentityClassifier& clf, const Image& coverage,
                                   std::string source) {
  if (id_features.channels() != clf.weight.cols()) throw ValidationError("identity feature dimension mismatch");
  if (clf.groups() < 1 || clf.bias.size() != clf.groups()) throw ValidationError("malformed identity classifier");
  if (coverage.height() != id_features.height() || coverage.width() != id_features.width() ||
      coverage.channels() != 1) {
    throw ValidationError("coverage map shape does not match identity features");
  }
  GroupIdentityMap map;
  map.height = id_features.height();
  map.width = id_features.width();
  map.source = std::move(source);
  map.ids.assign(std::size_t(id_features.pixel_count()), kBackground);

  for (Eigen::Index p = 0; p < id_features.pixel_count(); ++p) {
    if (coverage.data()(p, 0) < kCoverageThreshold) continue;
    const Eigen::VectorXd logits = clf.weight * id_features.data().row(p).transpose() + clf.bias;
    const Eigen::VectorXd prob = (logits.array() - logits.maxCoeff()).exp();
    // First maximum wins, so exact ties resolve to the lowest id.
    int best = 0;
    for (int i = 1; i < prob.size(); ++i) {
      if (prob[i] > prob[best]) best = i;
    }
    map.ids[std::size_t(p)] = best;
  }
  return map;
}

GroupIdentityMap render_identity_map(const GaussianScene& scene, const Camera& cam, const IdentityClassifier& clf,
                                     const RenderOptions& opts) {
  const RenderOutput out = render(scene, cam, opts);
  return classify_identity(out.id_features, clf, out.coverage, "render");
}

GroupSet build_group_sets(const GroupIdentityMap& map, int k) {
  if (k < 1) throw ValidationError("group count must be positive");
  GroupSet set;
  set.height = map.height;
  set.width = map.width;
  set.groups.assign(k, {});
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      const int id = map.at(r, c);
      if (id == kBackground) continue;
      if (id < 0 || id >= k) {
        throw ValidationError("group id " + std::to_string(id) + " out of range for K=" + std::to_string(k));
      }
      set.groups[id].push_back({r, c});
    }
  }
  return set;
}

ViewMatching match_groups(const GroupSet& x, const GroupSet& y) {
  if (x.k() != y.k()) throw ValidationError("group matching needs the same K on both sides");
  ViewMatching m;
  m.target.resize(x.k());
  for (int i = 0; i < x.k(); ++i) m.target[i] = y.groups[i].empty() ? ViewMatching::kGlobal : i;
  return m;
}

GroupMatching match_groups(const GroupSet& x, const std::vector<GroupSet>& ys) {
  GroupMatching m;
  for (const auto& y : ys) m.views.push_back(match_groups(x, y));
  return m;
}

GroupIdentityMap downsample_group_map(const GroupIdentityMap& map, int stride) {
  if (stride < 1) throw ValidationError("stride must be >= 1");
  if (map.height % stride || map.width % stride) {
    throw ValidationError("stride " + std::to_string(stride) + " does not divide the group map size");
  }
  GroupIdentityMap out;
  out.height = map.height / stride;
  out.width = map.width / stride;
  out.source = map.source;
  out.ids.assign(std::size_t(out.height) * out.width, kBackground);
  const int cells = stride * stride;
  std::vector<int> counts;
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      counts.clear();
      int background = 0;
      for (int dr = 0; dr < stride; ++dr) {
        for (int dc = 0; dc < stride; ++dc) {
          const int id = map.at(r * stride + dr, c * stride + dc);
          if (id == kBackground) {
            ++background;
            continue;
          }
          if (id >= int(counts.size())) counts.resize(id + 1, 0);
          ++counts[id];
        }
      }
      int label = kBackground;
      if (2 * background <= cells) {
        int best = -1;
        for (int id = 0; id < int(counts.size()); ++id) {
          if (counts[id] > 0 && (best < 0 || counts[id] > counts[best])) best = id;
        }
        label = best;
      }
      out.ids[std::size_t(r) * out.width + c] = label;
    }
  }
  return out;
}

std::vector<unsigned char> group_map_bytes(const GroupIdentityMap& map) {
  std::vector<unsigned char> bytes(map.ids.size());
  std::transform(map.ids.begin(), map.ids.end(), bytes.begin(), [](int id) {
    return id == kBackground ? kBackgroundPng : static_cast<unsigned char>(std::min(id, 254));
  });
  return bytes;
}

}  // namespace stylesplat
