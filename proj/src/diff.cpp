#include "stylesplat/diff.hpp"

#include <algorithm>
#include <cmath>

namespace stylesplat {

namespace {

constexpr int kTimeFeatures = 8;

int slot_index(AttentionSlot slot) { return int(slot) - 1; }

void check_finite(const Image& z, const char* phase, int t) {
  if (!z.data().allFinite()) {
    throw NumericError(std::string(phase) + ": non-finite latent at step t=" + std::to_string(t));
  }
}

Image add_row(Image x, const Eigen::RowVectorXd& row) {
  x.data().rowwise() += row;
  return x;
}

Image normalized_depth(const Image& depth, int height, int width) {
  if (depth.empty()) return Image(height, width, 1);
  if (depth.height() != height || depth.width() != width || depth.channels() != 1) {
    throw ValidationError("depth conditioning must be a single-channel map at the latent resolution");
  }
  Image d = depth;
  const double max_depth = d.data().maxCoeff();
  if (max_depth > 0.0) d.data() /= max_depth;
  return d;
}

void check_views(const std::vector<Image>& zs, const std::vector<StyleConditioning>& conds) {
  if (zs.empty()) throw ValidationError("need at least one view");
  if (conds.size() != zs.size()) throw ValidationError("one conditioning per view is required");
  for (const auto& z : zs) {
    if (!z.same_shape(zs.front())) throw ValidationError("all views must share resolution and channels");
  }
}

}  // namespace

StyleEmbedding style_embedding(const Image& style) {
  if (style.channels() != 3 || style.pixel_count() == 0) throw ValidationError("style image must be non-empty RGB");
  const Eigen::RowVector3d mean = style.data().colwise().mean();
  const RowMatrix<double> centered = style.data().rowwise() - mean;
  const Eigen::Matrix3d cov = (centered.transpose() * centered) / double(style.pixel_count());
  StyleEmbedding e;
  e.head<3>() = mean.transpose();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) e[3 + 3 * r + c] = cov(r, c);
  }
  return e;
}

DDIMSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ValidationError("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ValidationError("schedule needs 0 < beta_start <= beta_end < 1");
  }
  DDIMSchedule sch;
  sch.steps = steps;
  sch.beta_start = beta_start;
  sch.beta_end = beta_end;
  sch.alpha_bar.resize(steps + 1);
  sch.alpha_bar[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double beta = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (steps - 1);
    sch.alpha_bar[t] = sch.alpha_bar[t - 1] * (1.0 - beta);
  }
  return sch;
}

AttentionSlot parse_attention_slot(std::string_view name) {
  if (name == "none") return AttentionSlot::none;
  if (name == "enc1") return AttentionSlot::enc1;
  if (name == "enc2") return AttentionSlot::enc2;
  if (name == "mid") return AttentionSlot::mid;
  if (name == "dec1") return AttentionSlot::dec1;
  if (name == "dec2-last") return AttentionSlot::dec2_last;
  throw ConfigError("unknown cvsa block '" + std::string(name) + "'");
}

std::string to_string(AttentionSlot slot) {
  switch (slot) {
    case AttentionSlot::none: return "none";
    case AttentionSlot::enc1: return "enc1";
    case AttentionSlot::enc2: return "enc2";
    case AttentionSlot::mid: return "mid";
    case AttentionSlot::dec1: return "dec1";
    case AttentionSlot::dec2_last: return "dec2-last";
  }
  return "none";
}

std::vector<Image> Denoiser::predict_views(const std::vector<Image>& zs, int t,
                                           const std::vector<StyleConditioning>& conds) const {
  check_views(zs, conds);
  std::vector<Image> out;
  out.reserve(zs.size());
  for (std::size_t v = 0; v < zs.size(); ++v) out.push_back(predict(zs[v], t, conds[v]));
  return out;
}

// Channel widths: stem 8 at full resolution; 16, 24, 32 at 1/2, 1/4, 1/8.
ToyUNet::ToyUNet(const Config& config) : config_(config) {
  Rng rng(derive_seed(config.seed, "denoiser"));
  conv_in_ = nn::Conv3x3::random(4, 8, rng);
  conv_enc1_ = nn::Conv3x3::random(8, 16, rng);
  conv_enc2_ = nn::Conv3x3::random(16, 24, rng);
  conv_mid_ = nn::Conv3x3::random(24, 32, rng);
  conv_dec1_ = nn::Conv3x3::random(32 + 24, 24, rng);
  conv_dec2_ = nn::Conv3x3::random(24 + 16, 16, rng);
  conv_up_ = nn::Conv3x3::random(16 + 8, 8, rng);
  conv_out_ = nn::Conv3x3::random(8, 3, rng);
  time_in_ = Eigen::MatrixXd(kTimeFeatures, 8);
  time_mid_ = Eigen::MatrixXd(kTimeFeatures, 32);
  style_proj_ = Eigen::MatrixXd(12, 32);
  for (auto* m : {&time_in_, &time_mid_}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = 0.3 * rng.normal();
  }
  for (Eigen::Index i = 0; i < style_proj_.size(); ++i) style_proj_.data()[i] = config_.style_gain * rng.normal();
  const std::array<int, kSlots> dims{16, 24, 32, 24, 16};
  for (int s = 0; s < kSlots; ++s) attention_[s] = AttentionBlock::random(dims[s], dims[s], rng);
}

Eigen::RowVectorXd ToyUNet::time_features(int t) const {
  Eigen::RowVectorXd f(kTimeFeatures);
  for (int k = 0; k < kTimeFeatures / 2; ++k) {
    const double omega = std::pow(10.0, -0.5 * k);
    f[2 * k] = std::sin(t * omega);
    f[2 * k + 1] = std::cos(t * omega);
  }
  return f;
}

void ToyUNet::attend(AttentionSlot slot, std::vector<Image>& features) const {
  const AttentionBlock& blk = attention_[slot_index(slot)];
  std::vector<RowMatrix<double>> delta(features.size());
  if (slot == config_.cvsa_block) {
    Eigen::Index tokens = 0;
    for (const auto& f : features) tokens += f.pixel_count();
    RowMatrix<double> context(tokens, features.front().channels());
    Eigen::Index row = 0;
    for (const auto& f : features) {
      context.middleRows(row, f.pixel_count()) = f.data();
      row += f.pixel_count();
    }
    for (std::size_t v = 0; v < features.size(); ++v) delta[v] = cross_view_attention(blk, features[v].data(), context);
  } else {
    for (std::size_t v = 0; v < features.size(); ++v) delta[v] = self_attention(blk, features[v].data());
  }
  for (std::size_t v = 0; v < features.size(); ++v) features[v].data() += config_.attention_gain * delta[v];
}

std::vector<Image> ToyUNet::forward(const std::vector<const Image*>& zs, int t,
                                    const std::vector<const StyleConditioning*>& conds) const {
  const std::size_t views = zs.size();
  for (const Image* z : zs) {
    if (z->channels() != 3) throw ValidationError("toy denoiser operates on 3-channel states");
    if (z->height() % 8 || z->width() % 8) throw ValidationError("toy denoiser needs H and W divisible by 8");
  }
  const Eigen::RowVectorXd temb = time_features(t);
  const Eigen::RowVectorXd t_in = temb * time_in_;
  const Eigen::RowVectorXd t_mid = temb * time_mid_;

  std::vector<Image> stem(views), h1(views), h2(views), h3(views);
  for (std::size_t v = 0; v < views; ++v) {
    const Image x = nn::concat_channels(*zs[v], normalized_depth(conds[v]->depth, zs[v]->height(), zs[v]->width()));
    stem[v] = nn::silu(add_row(conv_in_.forward(x), t_in));
    h1[v] = nn::silu(conv_enc1_.forward(nn::avg_pool2(stem[v])));
  }
  attend(AttentionSlot::enc1, h1);
  for (std::size_t v = 0; v < views; ++v) h2[v] = nn::silu(conv_enc2_.forward(nn::avg_pool2(h1[v])));
  attend(AttentionSlot::enc2, h2);
  for (std::size_t v = 0; v < views; ++v) {
    const Eigen::RowVectorXd style = (conds[v]->embedding.transpose() * style_proj_);
    h3[v] = nn::silu(add_row(conv_mid_.forward(nn::avg_pool2(h2[v])), t_mid + style));
  }
  attend(AttentionSlot::mid, h3);

  std::vector<Image> d1(views), d2(views), out(views);
  for (std::size_t v = 0; v < views; ++v) {
    d1[v] = nn::silu(conv_dec1_.forward(nn::concat_channels(nn::upsample2(h3[v]), h2[v])));
  }
  attend(AttentionSlot::dec1, d1);
  for (std::size_t v = 0; v < views; ++v) {
    d2[v] = nn::silu(conv_dec2_.forward(nn::concat_channels(nn::upsample2(d1[v]), h1[v])));
  }
  attend(AttentionSlot::dec2_last, d2);
  for (std::size_t v = 0; v < views; ++v) {
    const Image up = nn::silu(conv_up_.forward(nn::concat_channels(nn::upsample2(d2[v]), stem[v])));
    out[v] = conv_out_.forward(up);
    out[v].data() *= config_.output_scale;
  }
  return out;
}

Image ToyUNet::predict(const Image& z, int t, const StyleConditioning& cond) const {
  return forward({&z}, t, {&cond}).front();
}

std::vector<Image> ToyUNet::predict_views(const std::vector<Image>& zs, int t,
                                          const std::vector<StyleConditioning>& conds) const {
  check_views(zs, conds);
  std::vector<const Image*> zp;
  std::vector<const StyleConditioning*> cp;
  for (std::size_t v = 0; v < zs.size(); ++v) {
    zp.push_back(&zs[v]);
    cp.push_back(&conds[v]);
  }
  return forward(zp, t, cp);
}

std::vector<Image> ddim_invert_views(std::vector<Image> zs, const Denoiser& den, const DDIMSchedule& sch,
                                     const std::vector<StyleConditioning>& conds) {
  check_views(zs, conds);
  for (int t = 1; t <= sch.steps; ++t) {
    const std::vector<Image> eps = den.predict_views(zs, t, conds);
    for (std::size_t v = 0; v < zs.size(); ++v) {
      zs[v].data() = inversion_step(zs[v].data(), eps[v].data(), sch.alpha_bar[t - 1], sch.alpha_bar[t]);
      check_finite(zs[v], "ddim_invert", t);
    }
  }
  return zs;
}

std::vector<Image> ddim_denoise_views(std::vector<Image> zs, const Denoiser& den, const DDIMSchedule& sch,
                                      const std::vector<StyleConditioning>& conds) {
  check_views(zs, conds);
  for (int t = sch.steps; t >= 1; --t) {
    const std::vector<Image> eps = den.predict_views(zs, t, conds);
    for (std::size_t v = 0; v < zs.size(); ++v) {
      zs[v].data() = denoise_step(zs[v].data(), eps[v].data(), sch.alpha_bar[t], sch.alpha_bar[t - 1]);
      check_finite(zs[v], "ddim_denoise", t);
    }
  }
  return zs;
}

LatentState ddim_invert(const LatentState& z0, const Denoiser& den, const DDIMSchedule& sch,
                        const StyleConditioning& cond) {
  if (z0.t != 0) throw ValidationError("ddim_invert expects a state at t=0");
  check_finite(z0.z, "ddim_invert", 0);
  LatentState out{z0.z, 0};
  for (int t = 1; t <= sch.steps; ++t) {
    const Image eps = den.predict(out.z, t, cond);
    out.z.data() = inversion_step(out.z.data(), eps.data(), sch.alpha_bar[t - 1], sch.alpha_bar[t]);
    out.t = t;
    check_finite(out.z, "ddim_invert", t);
  }
  return out;
}

LatentState ddim_denoise(const LatentState& zT, const Denoiser& den, const DDIMSchedule& sch,
                         const StyleConditioning& cond) {
  if (zT.t != sch.steps) throw ValidationError("ddim_denoise expects a state at t=T");
  check_finite(zT.z, "ddim_denoise", zT.t);
  LatentState out = zT;
  for (int t = sch.steps; t >= 1; --t) {
    const Image eps = den.predict(out.z, t, cond);
    out.z.data() = denoise_step(out.z.data(), eps.data(), sch.alpha_bar[t], sch.alpha_bar[t - 1]);
    out.t = t - 1;
    check_finite(out.z, "ddim_denoise", t);
  }
  return out;
}

std::vector<Image> stylize_key_views(const std::vector<Image>& renders, const std::vector<Image>& depths,
                                     const StyleEmbedding& style, const Denoiser& den, const DDIMSchedule& sch) {
  if (renders.empty()) throw ValidationError("stylize_key_views needs at least one view");
  if (depths.size() != renders.size()) throw ValidationError("one depth map per key view is required");
  std::vector<StyleConditioning> null_cond(renders.size()), style_cond(renders.size());
  for (std::size_t v = 0; v < renders.size(); ++v) {
    if (!renders[v].same_shape(renders.front()) || renders[v].channels() != 3) {
      throw ValidationError("all key views must be RGB at the same resolution");
    }
    if (depths[v].height() != renders[v].height() || depths[v].width() != renders[v].width()) {
      throw ValidationError("depth map resolution does not match its key view");
    }
    null_cond[v].depth = depths[v];
    style_cond[v].depth = depths[v];
    style_cond[v].embedding = style;
  }
  std::vector<Image> noisy = ddim_invert_views(renders, den, sch, null_cond);
  std::vector<Image> out = ddim_denoise_views(std::move(noisy), den, sch, style_cond);
  for (auto& img : out) img.data() = img.data().cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

}  // namespace stylesplat
