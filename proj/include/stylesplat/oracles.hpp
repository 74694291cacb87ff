#pragma once

// Reference implementations written independently of the production code paths.
// They favor directness over speed and exist to check the optimized versions.

#include "stylesplat/attention.hpp"
#include "stylesplat/group.hpp"
#include "stylesplat/style.hpp"

#include <span>
#include <vector>

namespace stylesplat::oracle {

/// Per-pixel compositing over every Gaussian with no tiling, footprint culling or
/// falloff cutoff. Projection math is re-derived from explicit matrices.
RenderOutput brute_force_render(const GaussianScene& scene, const Camera& cam);

/// Argmax of composited identity features from brute_force_render (first K coords).
GroupIdentityMap brute_force_identity_map(const GaussianScene& scene, const Camera& cam);

/// Group-free nearest-neighbor cosine loss: every non-background query cell against
/// every non-background key cell of every view.
double global_nnfm(const FeatureMap& query, std::span<const FeatureMap> keys, const GroupIdentityMap& query_ids,
                   std::span<const GroupIdentityMap> key_ids);

/// Attention evaluated with explicit loops.
RowMatrix<double> dense_attention(const AttentionBlock& blk, const RowMatrix<double>& z,
                                  const RowMatrix<double>& context);

/// Largest achievable minimum pairwise distance over all k-subsets of positions.
double best_subset_spread(std::span<const Vec3> positions, int k);

/// Central finite difference of f at x along coordinate i.
template <typename F>
double central_difference(F&& f, Eigen::VectorXd x, int i, double eps) {
  x[i] += eps;
  const double plus = f(x);
  x[i] -= 2.0 * eps;
  const double minus = f(x);
  return (plus - minus) / (2.0 * eps);
}

}  // namespace stylesplat::oracle
