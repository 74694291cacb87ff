#pragma once

#include "stylesplat/nn.hpp"

#include <string>
#include <vector>

namespace stylesplat {

/// Dense features at 1/stride resolution; one row per cell.
struct FeatureMap {
  Image features;
  int stride = 1;
  std::string tag;

  int height() const { return features.height(); }
  int width() const { return features.width(); }
  int dim() const { return features.channels(); }
};

/// Fixed, seeded convolutional pyramid: per stage a 3x3 convolution, ReLU and 2x2
/// average pooling. The default two stages give stride 4 and 32 output channels.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed, int stages = 2, int dim = 32);

  /// Activations kept for the backward pass.
  struct Trace {
    std::vector<Image> inputs;  // input of each stage's convolution
    std::vector<Image> pre;     // convolution output before ReLU
    FeatureMap map;
  };

  int stride() const { return 1 << int(convs_.size()); }
  int dim() const { return convs_.back().out_channels(); }
  std::uint64_t seed() const { return seed_; }

  FeatureMap extract(const Image& rgb, std::string tag = {}) const;
  Trace forward(const Image& rgb, std::string tag = {}) const;
  /// Image-space gradient for an upstream gradient on the features of `trace`.
  Image backward(const Trace& trace, const Image& grad_features) const;

 private:
  void check_input(const Image& rgb) const;

  std::uint64_t seed_;
  std::vector<nn::Conv3x3> convs_;
};

}  // namespace stylesplat
