#pragma once

#include "stylesplat/pipeline.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace stylesplat::check {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Tiled renderer against the brute-force oracle with the cutoff disabled.
CheckResult render_oracle(int scenes, int max_gaussians, int size, std::uint64_t seed, double time_limit_s);

/// Zero-noise and constant-noise identities plus the seeded-denoiser roundtrip.
CheckResult ddim_algebra(int steps, int size, std::uint64_t seed, double roundtrip_bound);

/// K=1 reduction, duplicated-context invariance and cvsa_block=none independence.
CheckResult attention_reductions(int size, int steps, std::uint64_t seed);

/// All 2^3 x 2^3 emptiness patterns of three groups.
CheckResult group_matching_exhaustive();

/// Randomized instances against the exhaustive oracle, and K=1 against global NNFM.
CheckResult ist_oracle(int instances, std::uint64_t seed);

/// Analytic color gradient through render, features and the loss against central
/// differences with the matches frozen.
CheckResult gradient_check(int samples, std::uint64_t seed);

/// Short-range masked RMSE of a scene's own renders on an orbit.
CheckResult consistency_soundness(const GaussianScene& scene, const std::vector<Camera>& cams, const std::string& label,
                                  double bound);

/// Reference pipeline run: wall time, style loss ratio and a valid output scene.
CheckResult stylization_run(const PipelineResult& run, const GaussianScene& styled, double seconds,
                            double time_limit_s, double max_ratio);

/// All four ablation variants finish, each trace decreases by `min_decrease`, and
/// both comparisons are reported.
CheckResult ablation(const json& ablation_report, const std::filesystem::path& dir, double min_decrease);

CheckResult determinism(const json& manifest_a, const json& manifest_b);

/// Reduced-size run of every check; `scratch` receives pipeline outputs.
std::vector<CheckResult> run_selftest(const std::filesystem::path& scratch, int workers);

}  // namespace stylesplat::check
