#include "stylesplat/features.hpp"

#include <algorithm>

namespace stylesplat {

FeatureExtractor::FeatureExtractor(std::uint64_t seed, int stages, int dim) : seed_(seed) {
  if (stages < 1 || stages > 4) throw ValidationError("feature extractor needs 1..4 stages");
  if (dim < 1) throw ValidationError("feature dimension must be positive");
  Rng rng(derive_seed(seed, "features"));
  int in = 3;
  for (int s = 0; s < stages; ++s) {
    const int out = std::max(8, dim >> (stages - 1 - s));
    convs_.push_back(nn::Conv3x3::random(in, s + 1 == stages ? dim : out, rng));
    in = convs_.back().out_channels();
  }
}

void FeatureExtractor::check_input(const Image& rgb) const {
  if (rgb.channels() != 3) throw ValidationError("feature extractor expects an RGB image");
  if (rgb.height() % stride() != 0 || rgb.width() % stride() != 0) {
    throw ValidationError("image size " + std::to_string(rgb.height()) + "x" + std::to_string(rgb.width()) +
                          " is not divisible by the feature stride " + std::to_string(stride()));
  }
}

FeatureExtractor::Trace FeatureExtractor::forward(const Image& rgb, std::string tag) const {
  check_input(rgb);
  Trace trace;
  Image x = rgb;
  for (const auto& conv : convs_) {
    trace.inputs.push_back(x);
    Image pre = conv.forward(x);
    x = nn::avg_pool2(nn::relu(pre));
    trace.pre.push_back(std::move(pre));
  }
  trace.map = FeatureMap{std::move(x), stride(), std::move(tag)};
  return trace;
}

FeatureMap FeatureExtractor::extract(const Image& rgb, std::string tag) const {
  return forward(rgb, std::move(tag)).map;
}

Image FeatureExtractor::backward(const Trace& trace, const Image& grad_features) const {
  if (!grad_features.same_shape(trace.map.features)) throw ValidationError("feature gradient shape mismatch");
  Image g = grad_features;
  for (int s = int(convs_.size()) - 1; s >= 0; --s) {
    const Image& pre = trace.pre[s];
    g = nn::avg_pool2_backward(g, pre.height(), pre.width());
    g = nn::relu_backward(pre, g);
    g = convs_[s].backward_input(trace.inputs[s], g);
  }
  return g;
}

}  // namespace stylesplat
