#include "stylesplat/nn.hpp"

#include <algorithm>
#include <cmath>

namespace stylesplat::nn {

namespace {

// Source row of every output pixel for tap offset (dy, dx), clamped at the border.
std::vector<Eigen::Index> gather_index(int height, int width, int dy, int dx) {
  std::vector<Eigen::Index> idx(std::size_t(height) * width);
  for (int r = 0; r < height; ++r) {
    const int sr = std::clamp(r + dy, 0, height - 1);
    for (int c = 0; c < width; ++c) {
      const int sc = std::clamp(c + dx, 0, width - 1);
      idx[std::size_t(r) * width + c] = Eigen::Index(sr) * width + sc;
    }
  }
  return idx;
}

}  // namespace

Conv3x3 Conv3x3::random(int in_channels, int out_channels, Rng& rng, double gain) {
  Conv3x3 conv;
  const double std_dev = gain * std::sqrt(2.0 / (9.0 * in_channels));
  for (auto& tap : conv.taps) {
    tap.resize(in_channels, out_channels);
    for (Eigen::Index i = 0; i < tap.size(); ++i) tap.data()[i] = std_dev * rng.normal();
  }
  conv.bias.resize(out_channels);
  for (int k = 0; k < out_channels; ++k) conv.bias[k] = 0.05 * rng.normal();
  return conv;
}

Image Conv3x3::forward(const Image& x) const {
  if (x.channels() != in_channels()) throw ValidationError("conv input channel mismatch");
  Image out(x.height(), x.width(), out_channels());
  out.data().rowwise() = bias;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const auto idx = gather_index(x.height(), x.width(), dy, dx);
      const RowMatrix<double> shifted = x.data()(idx, Eigen::all);
      out.data().noalias() += shifted * taps[(dy + 1) * 3 + (dx + 1)];
    }
  }
  return out;
}

Image Conv3x3::backward_input(const Image& x_shape, const Image& grad_out) const {
  Image grad(x_shape.height(), x_shape.width(), in_channels());
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const auto idx = gather_index(x_shape.height(), x_shape.width(), dy, dx);
      const RowMatrix<double> g = grad_out.data() * taps[(dy + 1) * 3 + (dx + 1)].transpose();
      for (std::size_t p = 0; p < idx.size(); ++p) grad.data().row(idx[p]) += g.row(Eigen::Index(p));
    }
  }
  return grad;
}

Image avg_pool2(const Image& x) {
  if (x.height() % 2 || x.width() % 2) throw ValidationError("avg_pool2 needs even image dimensions");
  Image out(x.height() / 2, x.width() / 2, x.channels());
  for (int r = 0; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) {
      out.pixel(r, c) = 0.25 * (x.pixel(2 * r, 2 * c) + x.pixel(2 * r, 2 * c + 1) + x.pixel(2 * r + 1, 2 * c) +
                                x.pixel(2 * r + 1, 2 * c + 1));
    }
  }
  return out;
}

Image avg_pool2_backward(const Image& grad_out, int in_height, int in_width) {
  Image grad(in_height, in_width, grad_out.channels());
  for (int r = 0; r < in_height; ++r) {
    for (int c = 0; c < in_width; ++c) grad.pixel(r, c) = 0.25 * grad_out.pixel(r / 2, c / 2);
  }
  return grad;
}

Image upsample2(const Image& x) {
  Image out(x.height() * 2, x.width() * 2, x.channels());
  for (int r = 0; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) out.pixel(r, c) = x.pixel(r / 2, c / 2);
  }
  return out;
}

Image concat_channels(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw ValidationError("concat resolution mismatch");
  Image out(a.height(), a.width(), a.channels() + b.channels());
  out.data().leftCols(a.channels()) = a.data();
  out.data().rightCols(b.channels()) = b.data();
  return out;
}

Image relu(const Image& x) {
  Image out = x;
  out.data() = x.data().cwiseMax(0.0);
  return out;
}

Image relu_backward(const Image& pre_activation, const Image& grad_out) {
  Image out = grad_out;
  out.data() = (pre_activation.data().array() > 0.0).select(grad_out.data(), 0.0);
  return out;
}

Image silu(const Image& x) {
  Image out = x;
  out.data() = x.data().unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
  return out;
}

}  // namespace stylesplat::nn
