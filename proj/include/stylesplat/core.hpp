#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stylesplat {

// Error taxonomy. The CLI maps each kind to a stable exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unknown names, malformed configuration, unknown config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A module precondition or type invariant was violated.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A computation produced non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// The inputs are well-formed but the quantity is undefined (empty masks, empty match sets).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Missing or unreadable files.
class IoError : public Error {
 public:
  using Error::Error;
};

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense multi-channel image stored as a (height*width) x channels row-major matrix.
///
/// Row index is `r * width + c`; one row holds all channels of one pixel, so an
/// image doubles as a token matrix for attention and as a feature matrix for
/// nearest-neighbor search.
template <typename Scalar>
class ImageT {
 public:
  using Matrix = RowMatrix<Scalar>;

  ImageT() = default;
  ImageT(int height, int width, int channels, Scalar fill = Scalar(0))
      : height_(height), width_(width), data_(Matrix::Constant(Eigen::Index(height) * width, channels, fill)) {}
  ImageT(int height, int width, Matrix data) : height_(height), width_(width), data_(std::move(data)) {
    if (data_.rows() != Eigen::Index(height) * width) {
      throw ValidationError("image data rows do not match height*width");
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return int(data_.cols()); }
  Eigen::Index pixel_count() const { return data_.rows(); }
  bool empty() const { return data_.size() == 0; }

  Eigen::Index index(int r, int c) const { return Eigen::Index(r) * width_ + c; }

  Scalar& operator()(int r, int c, int ch) { return data_(index(r, c), ch); }
  Scalar operator()(int r, int c, int ch) const { return data_(index(r, c), ch); }

  auto pixel(int r, int c) { return data_.row(index(r, c)); }
  auto pixel(int r, int c) const { return data_.row(index(r, c)); }

  Matrix& data() { return data_; }
  const Matrix& data() const { return data_; }

  bool same_shape(const ImageT& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels() == other.channels();
  }

  friend bool operator==(const ImageT& a, const ImageT& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  Matrix data_;
};

using Image = ImageT<double>;

/// Deterministic random source. Distributions are implemented here rather than
/// with <random> distributions so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  int below(int n) { return int(engine_() % std::uint64_t(n)); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Expands a root seed into an independent stream seed for a named stage.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

/// Runs fn(begin, end, worker) over [0, n) split into contiguous chunks, one per worker.
/// Chunk boundaries depend only on (n, workers).
void parallel_for(int n, int workers, const std::function<void(int, int, int)>& fn);

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace stylesplat
