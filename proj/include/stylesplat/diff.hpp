#pragma once

#include "stylesplat/attention.hpp"
#include "stylesplat/nn.hpp"

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace stylesplat {

/// Mean color followed by the row-major 3x3 channel covariance.
using StyleEmbedding = Eigen::Matrix<double, 12, 1>;

StyleEmbedding style_embedding(const Image& style);

/// Conditioning of one view: the global style vector and the view's depth map.
/// A zero embedding is the null (unstyled) condition.
struct StyleConditioning {
  StyleEmbedding embedding = StyleEmbedding::Zero();
  Image depth;
};

struct DDIMSchedule {
  int steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  Eigen::VectorXd alpha_bar;  // steps + 1 entries, alpha_bar[0] = 1
};

/// Linear beta ramp over `steps` steps and its cumulative product.
DDIMSchedule make_schedule(int steps, double beta_start, double beta_end);

/// One inversion step from z_{t-1} to z_t.
template <typename Scalar, typename DerivedZ, typename DerivedE>
auto inversion_step(const Eigen::MatrixBase<DerivedZ>& z_prev, const Eigen::MatrixBase<DerivedE>& eps,
                    Scalar alpha_bar_prev, Scalar alpha_bar_t) {
  using std::sqrt;
  return ((sqrt(alpha_bar_t) / sqrt(alpha_bar_prev)) * (z_prev - sqrt(Scalar(1) - alpha_bar_prev) * eps) +
          sqrt(Scalar(1) - alpha_bar_t) * eps)
      .eval();
}

/// One denoising step from z_t to z_{t-1}.
template <typename Scalar, typename DerivedZ, typename DerivedE>
auto denoise_step(const Eigen::MatrixBase<DerivedZ>& z_t, const Eigen::MatrixBase<DerivedE>& eps,
                  Scalar alpha_bar_t, Scalar alpha_bar_prev) {
  using std::sqrt;
  return (sqrt(alpha_bar_prev) * ((z_t - sqrt(Scalar(1) - alpha_bar_t) * eps) / sqrt(alpha_bar_t)) +
          sqrt(Scalar(1) - alpha_bar_prev) * eps)
      .eval();
}

struct LatentState {
  Image z;
  int t = 0;
};

enum class AttentionSlot { none, enc1, enc2, mid, dec1, dec2_last };

AttentionSlot parse_attention_slot(std::string_view name);
std::string to_string(AttentionSlot slot);

/// Noise predictor epsilon(z, t, cond).
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual Image predict(const Image& z, int t, const StyleConditioning& cond) const = 0;

  /// Evaluates all views at one timestep. The default evaluates each view alone.
  virtual std::vector<Image> predict_views(const std::vector<Image>& zs, int t,
                                           const std::vector<StyleConditioning>& conds) const;
};

class ZeroDenoiser final : public Denoiser {
 public:
  Image predict(const Image& z, int, const StyleConditioning&) const override {
    return Image(z.height(), z.width(), z.channels());
  }
};

/// Predicts the same value everywhere regardless of state.
class ConstantDenoiser final : public Denoiser {
 public:
  explicit ConstantDenoiser(double value) : value_(value) {}
  Image predict(const Image& z, int, const StyleConditioning&) const override {
    return Image(z.height(), z.width(), z.channels(), value_);
  }

 private:
  double value_;
};

/// Seeded 3-level encoder/decoder with an attention slot after every block.
///
/// Levels run at 1/2, 1/4 and 1/8 of the input resolution (so H and W must be
/// multiples of 8). Input is the RGB state with the normalized depth map appended;
/// the style embedding is projected and added to the bottleneck features. The slot
/// named by `cvsa_block` attends over the concatenated features of every view
/// evaluated together; all other slots use per-view self-attention.
class ToyUNet final : public Denoiser {
 public:
  struct Config {
    std::uint64_t seed = 0;
    AttentionSlot cvsa_block = AttentionSlot::dec2_last;
    double output_scale = 0.5;
    double style_gain = 2.0;
    double attention_gain = 0.5;
  };

  explicit ToyUNet(const Config& config);

  const Config& config() const { return config_; }

  Image predict(const Image& z, int t, const StyleConditioning& cond) const override;
  std::vector<Image> predict_views(const std::vector<Image>& zs, int t,
                                   const std::vector<StyleConditioning>& conds) const override;

 private:
  static constexpr int kSlots = 5;

  std::vector<Image> forward(const std::vector<const Image*>& zs, int t,
                             const std::vector<const StyleConditioning*>& conds) const;
  void attend(AttentionSlot slot, std::vector<Image>& features) const;
  Eigen::RowVectorXd time_features(int t) const;

  Config config_;
  nn::Conv3x3 conv_in_, conv_enc1_, conv_enc2_, conv_mid_, conv_dec1_, conv_dec2_, conv_up_, conv_out_;
  Eigen::MatrixXd time_in_, time_mid_;  // 8 -> channels
  Eigen::MatrixXd style_proj_;          // 12 -> mid channels
  std::array<AttentionBlock, kSlots> attention_;
};

/// Runs the inversion recursion for t = 1..T.
LatentState ddim_invert(const LatentState& z0, const Denoiser& den, const DDIMSchedule& sch,
                        const StyleConditioning& cond);
/// Runs the denoising recursion for t = T..1.
LatentState ddim_denoise(const LatentState& zT, const Denoiser& den, const DDIMSchedule& sch,
                         const StyleConditioning& cond);

/// Lockstep multi-view versions: every view advances one timestep per denoiser call.
std::vector<Image> ddim_invert_views(std::vector<Image> zs, const Denoiser& den, const DDIMSchedule& sch,
                                     const std::vector<StyleConditioning>& conds);
std::vector<Image> ddim_denoise_views(std::vector<Image> zs, const Denoiser& den, const DDIMSchedule& sch,
                                      const std::vector<StyleConditioning>& conds);

/// Inverts each view under the null condition, then denoises under the style
/// condition, all views in lockstep. Outputs are clamped to [0,1].
std::vector<Image> stylize_key_views(const std::vector<Image>& renders, const std::vector<Image>& depths,
                                     const StyleEmbedding& style, const Denoiser& den, const DDIMSchedule& sch);

}  // namespace stylesplat
