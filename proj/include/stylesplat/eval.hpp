#pragma once

#include "stylesplat/features.hpp"
#include "stylesplat/group.hpp"
#include "stylesplat/splat.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace stylesplat {

inline constexpr double kWarpWeightThreshold = 0.5;
inline constexpr double kWarpDepthTolerance = 0.01;  // relative

using PixelMask = std::vector<std::uint8_t>;

struct WarpResult {
  Image warped;    // destination resolution, 3 channels, zero outside the mask
  Image weight;    // accumulated bilinear weight of depth-consistent contributions
  PixelMask mask;  // covisible destination pixels
  int height = 0;
  int width = 0;

  int covisible() const;
};

struct WarpOptions {
  double weight_threshold = kWarpWeightThreshold;
  double depth_tolerance = kWarpDepthTolerance;
};

/// Forward-warps `src` (rendered at cam_src) into cam_dst by unprojecting each covered
/// pixel with its depth and splatting bilinearly. A point is kept only when its
/// reprojected depth agrees with `dst`'s rendered depth interpolated at the
/// reprojected position; destination pixels are covisible when the kept weight
/// exceeds the threshold.
WarpResult warp_view(const RenderOutput& src, const Camera& cam_src, const Camera& cam_dst, const RenderOutput& dst,
                     const WarpOptions& opts = {});

enum class ScoreMode { rmse, feature };

/// rmse: root mean squared color difference over masked pixels. feature: RMSE of
/// extractor features over cells whose stride block is majority-masked; `a` takes
/// `b`'s values outside the mask before extraction.
double consistency_score(const Image& a, const Image& b, const PixelMask& mask, const FeatureExtractor& fx,
                         ScoreMode mode);

/// Cell-normalized Gram matrix F^T F / cells.
Eigen::MatrixXd gram_matrix(const FeatureMap& f);
double gram_style_loss(const FeatureMap& a, const FeatureMap& b);
double content_loss(const FeatureMap& a, const FeatureMap& b);

struct PerceptualMetrics {
  double style_loss = 0.0;
  double content_loss = 0.0;
};

PerceptualMetrics perceptual_metrics(const Image& img, const Image& style, const Image& content_ref,
                                     const FeatureExtractor& fx);

struct PairScore {
  int src = 0;
  int dst = 0;
  bool long_range = false;
  int covisible = 0;
  double rmse = 0.0;
  double feature_rmse = 0.0;
  bool feature_defined = false;  // some feature cell is majority-masked
};

struct RangeSummary {
  double rmse = 0.0;
  double feature_rmse = 0.0;
  int pairs = 0;          // pairs with a nonempty covisibility mask
  int feature_pairs = 0;  // pairs whose feature score is defined
};

struct ConsistencyReport {
  std::vector<PairScore> pairs;
  RangeSummary short_range;
  RangeSummary long_range;
};

/// Short-range pairs are consecutive cameras; long-range pairs join each camera with
/// the camera farthest from it. Pairs without covisible pixels are reported with
/// covisible = 0 and excluded from the means; the feature mean also skips pairs
/// without a majority-masked cell.
ConsistencyReport consistency_report(const GaussianScene& scene, std::span<const Camera> cameras,
                                     const FeatureExtractor& fx, const RenderOptions& opts = {},
                                     const WarpOptions& warp = {});

/// Agreement between stylized key views: masked RMSE of each ordered pair after
/// warping with the render depths, and the mean L2 distance between per-instance
/// mean features of the same identity in different views.
struct KeyViewConsistency {
  double warp_rmse = 0.0;
  double instance_feature_distance = 0.0;
  int pairs = 0;
};

KeyViewConsistency key_view_consistency(std::span<const Image> stylized, std::span<const RenderOutput> renders,
                                        std::span<const Camera> cameras, std::span<const GroupIdentityMap> ids,
                                        const FeatureExtractor& fx);

}  // namespace stylesplat
