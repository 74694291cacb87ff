#pragma once

#include "stylesplat/core.hpp"

#include <array>
#include <vector>

namespace stylesplat::nn {

/// 3x3 convolution with edge-replicate padding, stride 1. A constant image maps to
/// a constant image.
struct Conv3x3 {
  std::array<RowMatrix<double>, 9> taps;  // each in_channels x out_channels, tap = (dy+1)*3 + (dx+1)
  Eigen::RowVectorXd bias;

  /// He-style initialization scaled by `gain`.
  static Conv3x3 random(int in_channels, int out_channels, Rng& rng, double gain = 1.0);

  int in_channels() const { return int(taps[0].rows()); }
  int out_channels() const { return int(taps[0].cols()); }

  Image forward(const Image& x) const;
  /// Gradient with respect to the input, given the gradient of the output.
  Image backward_input(const Image& x_shape, const Image& grad_out) const;
};

Image avg_pool2(const Image& x);
Image avg_pool2_backward(const Image& grad_out, int in_height, int in_width);
Image upsample2(const Image& x);
Image concat_channels(const Image& a, const Image& b);

Image relu(const Image& x);
Image relu_backward(const Image& pre_activation, const Image& grad_out);
Image silu(const Image& x);

}  // namespace stylesplat::nn
