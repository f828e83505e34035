#pragma once

#include <Eigen/Dense>

#include <string>

#include "dsgd/error.hpp"
#include "dsgd/matops.hpp"

namespace dsgd {

/// A point of R^{m d}: m client parameter blocks of dimension d, stored
/// block-contiguously. The column view `blocks()` is the d x m matrix whose
/// k-th column is client k's block, which turns every "W (x) I_d" product into
/// a single right-multiplication by W.
template <typename Scalar>
class StackedPoint {
 public:
  using Vec = VecX<Scalar>;
  using BlockView = Eigen::Map<MatX<Scalar>>;
  using ConstBlockView = Eigen::Map<const MatX<Scalar>>;

  StackedPoint() = default;
  StackedPoint(int clients, int dim) : m_(clients), d_(dim), data_(Vec::Zero(clients * dim)) {
    if (clients < 1 || dim < 1) {
      throw Error(ErrorCode::InvalidSize, "StackedPoint: m and d must be >= 1");
    }
  }
  StackedPoint(int clients, int dim, Vec values) : m_(clients), d_(dim), data_(std::move(values)) {
    if (clients < 1 || dim < 1) {
      throw Error(ErrorCode::InvalidSize, "StackedPoint: m and d must be >= 1");
    }
    if (data_.size() != Eigen::Index(clients) * dim) {
      throw Error(ErrorCode::ShapeMismatch, "StackedPoint: data length " +
                                                std::to_string(data_.size()) + " != m*d");
    }
  }

  /// 1_m (x) theta.
  static StackedPoint replicate(int clients, const Vec& theta) {
    StackedPoint out(clients, int(theta.size()));
    out.blocks().colwise() = theta;
    return out;
  }

  int clients() const { return m_; }
  int dim() const { return d_; }
  Eigen::Index size() const { return data_.size(); }

  Vec& values() { return data_; }
  const Vec& values() const { return data_; }

  auto block(int k) { return data_.segment(Eigen::Index(k) * d_, d_); }
  auto block(int k) const { return data_.segment(Eigen::Index(k) * d_, d_); }

  BlockView blocks() { return BlockView(data_.data(), d_, m_); }
  ConstBlockView blocks() const { return ConstBlockView(data_.data(), d_, m_); }

  Vec block_mean() const { return blocks().rowwise().mean(); }
  Scalar norm() const { return data_.norm(); }
  bool all_finite() const { return data_.allFinite(); }

  bool same_shape(const StackedPoint& other) const { return m_ == other.m_ && d_ == other.d_; }

  StackedPoint& operator+=(const StackedPoint& o) {
    check_shape(o);
    data_ += o.data_;
    return *this;
  }
  StackedPoint& operator-=(const StackedPoint& o) {
    check_shape(o);
    data_ -= o.data_;
    return *this;
  }
  StackedPoint& operator*=(Scalar s) {
    data_ *= s;
    return *this;
  }

  friend StackedPoint operator+(StackedPoint a, const StackedPoint& b) { return a += b; }
  friend StackedPoint operator-(StackedPoint a, const StackedPoint& b) { return a -= b; }
  friend StackedPoint operator*(Scalar s, StackedPoint a) { return a *= s; }
  friend StackedPoint operator*(StackedPoint a, Scalar s) { return a *= s; }

  void check_shape(const StackedPoint& o) const {
    if (!same_shape(o)) {
      throw Error(ErrorCode::ShapeMismatch,
                  "StackedPoint: (" + std::to_string(m_) + "," + std::to_string(d_) + ") vs (" +
                      std::to_string(o.m_) + "," + std::to_string(o.d_) + ")");
    }
  }

 private:
  int m_ = 0;
  int d_ = 0;
  Vec data_;
};

using Stacked = StackedPoint<double>;

/// P X: every block replaced by the block average.
template <typename Scalar>
StackedPoint<Scalar> project_consensus(const StackedPoint<Scalar>& x) {
  return StackedPoint<Scalar>::replicate(x.clients(), x.block_mean());
}

/// Q X = X - P X.
template <typename Scalar>
StackedPoint<Scalar> project_disagreement(const StackedPoint<Scalar>& x) {
  StackedPoint<Scalar> out = x;
  out.blocks().colwise() -= x.block_mean();
  return out;
}

/// (M (x) I_d) X for an m x m matrix M, applied block-wise.
template <typename Scalar, typename Derived>
StackedPoint<Scalar> apply_blockwise(const Eigen::MatrixBase<Derived>& mixing,
                                     const StackedPoint<Scalar>& x) {
  if (mixing.rows() != x.clients() || mixing.cols() != x.clients()) {
    throw Error(ErrorCode::ShapeMismatch, "apply_blockwise: mixing matrix is not m x m");
  }
  StackedPoint<Scalar> out(x.clients(), x.dim());
  out.blocks().noalias() = x.blocks() * mixing.transpose();
  return out;
}

}  // namespace dsgd
