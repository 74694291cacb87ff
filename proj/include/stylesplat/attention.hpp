#pragma once

#include "stylesplat/core.hpp"

#include <cmath>

namespace stylesplat {

/// Single-head attention projections. Each map is (input dim) x d.
template <typename Scalar>
struct AttentionBlockT {
  RowMatrix<Scalar> wq, wk, wv;

  int input_dim() const { return int(wq.rows()); }
  int head_dim() const { return int(wq.cols()); }

  static AttentionBlockT random(int input_dim, int head_dim, Rng& rng) {
    AttentionBlockT blk;
    const Scalar s = Scalar(1) / std::sqrt(Scalar(input_dim));
    for (auto* w : {&blk.wq, &blk.wk, &blk.wv}) {
      w->resize(input_dim, head_dim);
      for (Eigen::Index i = 0; i < w->size(); ++i) w->data()[i] = s * Scalar(rng.normal());
    }
    return blk;
  }
};

using AttentionBlock = AttentionBlockT<double>;

/// Row-wise softmax in place; rows sum to one.
template <typename Derived>
void softmax_rows(Eigen::MatrixBase<Derived>& scores) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    auto row = scores.row(r);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
}

/// Softmax(Q(z) K(ctx)^T / sqrt(d)) V(ctx). Queries come from `z` (tokens x d_in),
/// keys and values from `context` (any number of tokens x d_in). Queries are
/// processed in fixed-size chunks so memory stays bounded for long contexts.
template <typename Scalar, typename DerivedZ, typename DerivedC>
RowMatrix<Scalar> cross_view_attention(const AttentionBlockT<Scalar>& blk, const Eigen::MatrixBase<DerivedZ>& z,
                                       const Eigen::MatrixBase<DerivedC>& context) {
  if (z.cols() != blk.input_dim() || context.cols() != blk.input_dim()) {
    throw ValidationError("attention feature dimension mismatch");
  }
  if (context.rows() < 1) throw ValidationError("attention needs at least one key");
  const RowMatrix<Scalar> q = z * blk.wq;
  const RowMatrix<Scalar> k = context * blk.wk;
  const RowMatrix<Scalar> v = context * blk.wv;
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(Scalar(blk.head_dim()));

  RowMatrix<Scalar> out(z.rows(), blk.head_dim());
  constexpr Eigen::Index kChunk = 256;
  for (Eigen::Index begin = 0; begin < q.rows(); begin += kChunk) {
    const Eigen::Index n = std::min(kChunk, q.rows() - begin);
    RowMatrix<Scalar> scores = (q.middleRows(begin, n) * k.transpose()) * inv_sqrt_d;
    softmax_rows(scores);
    out.middleRows(begin, n).noalias() = scores * v;
  }
  return out;
}

/// Softmax(Q(z) K(z)^T / sqrt(d)) V(z).
template <typename Scalar, typename Derived>
RowMatrix<Scalar> self_attention(const AttentionBlockT<Scalar>& blk, const Eigen::MatrixBase<Derived>& z) {
  return cross_view_attention(blk, z, z);
}

}  // namespace stylesplat
