#pragma once

#include "stylesplat/features.hpp"
#include "stylesplat/group.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stylesplat {

inline constexpr double kCosineEpsilon = 1e-12;

/// 1 - a.b / max(|a||b|, eps).
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar denom = std::max(a.norm() * b.norm(), Scalar(kCosineEpsilon));
  return Scalar(1) - a.dot(b) / denom;
}

/// Gradient of cosine_distance(a, b) with respect to a.
template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, 1, Eigen::Dynamic> cosine_distance_grad(const Eigen::MatrixBase<DerivedA>& a,
                                                                                 const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar na = a.norm(), nb = b.norm();
  const Scalar prod = na * nb;
  if (prod <= Scalar(kCosineEpsilon)) return -b.transpose() / Scalar(kCosineEpsilon);
  return -(b.transpose() / prod - (a.dot(b) / (na * na * na * nb)) * a.transpose());
}

/// Location of a matched key feature.
struct FeatureMatch {
  int view = -1;  // -1 for background query cells
  int cell = -1;
};

struct StyleLossReport {
  double total = 0.0;
  /// Mean matched distance per identity; empty for identities absent from the query.
  std::vector<std::optional<double>> per_group;
  int n = 0;  // non-background query cells
  std::vector<FeatureMatch> matched;  // one per query cell
};

struct StyleLossResult {
  StyleLossReport report;
  Image grad;  // d total / d query features; same shape as the query map
};

/// Group-restricted nearest-neighbor cosine loss. Each non-background query cell with
/// identity k is matched against M(x_k) in every key view, pooled; ties go to the
/// lowest (view, cell) index. Gradient treats matches as constants.
StyleLossResult instance_style_loss(const FeatureMap& query, std::span<const FeatureMap> keys,
                                    const GroupMatching& matching, const GroupIdentityMap& query_ids,
                                    std::span<const GroupIdentityMap> key_ids);

/// Exhaustive reference evaluation of the same loss, re-deriving the matching
/// from the group maps cell by cell.
double nnfm_oracle(const FeatureMap& query, std::span<const FeatureMap> keys, const GroupMatching& matching,
                   const GroupIdentityMap& query_ids, std::span<const GroupIdentityMap> key_ids);

/// Loss and gradient with a frozen assignment of matches.
StyleLossResult style_loss_fixed_matches(const FeatureMap& query, std::span<const FeatureMap> keys,
                                         const std::vector<FeatureMatch>& matched);

/// Farthest-point sampling on camera positions starting from camera 0. Returns
/// indices in selection order; ties go to the lowest index.
std::vector<int> select_key_views(std::span<const Camera> cameras, int k);

enum class OptimizerKind { sgd, adam };
enum class TransferMode { ist, direct };

OptimizerKind parse_optimizer(std::string_view name);
TransferMode parse_transfer_mode(std::string_view name);
std::string to_string(OptimizerKind kind);
std::string to_string(TransferMode mode);

struct TransferConfig {
  int iterations = 300;
  double step_size = 0.01;
  OptimizerKind optimizer = OptimizerKind::adam;
  double lambda_style = 1.0;
  double lambda_content = 0.05;
  TransferMode mode = TransferMode::ist;
  int batch = 1;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

struct KeyView {
  Camera camera;
  Image stylized;
};

struct LossRecord {
  int iteration = 0;
  double style_loss = 0.0;
  double content_loss = 0.0;
  double total = 0.0;
  int camera = 0;  // first camera used in the iteration
};

struct TransferResult {
  GaussianScene scene;
  std::vector<LossRecord> trace;
};

/// Optimizes Gaussian colors against the stylized key views.
TransferResult optimize_scene(const GaussianScene& scene, std::span<const KeyView> key_views,
                              std::span<const Camera> train_cams, const TransferConfig& cfg,
                              const FeatureExtractor& fx, const IdentityClassifier& clf);

/// Mean instance style loss of `scene` over `cams` against the key views.
double mean_style_loss(const GaussianScene& scene, std::span<const KeyView> key_views, std::span<const Camera> cams,
                       const FeatureExtractor& fx, const IdentityClassifier& clf, int workers = 1);

/// Relative decrease of the trace: compares iteration 0 with the last iteration that
/// revisits the same camera (the whole trace if none does).
double trace_decrease(const std::vector<LossRecord>& trace);

std::string trace_csv(const std::vector<LossRecord>& trace);

}  // namespace stylesplat
