#pragma once

#include <Eigen/Core>

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <utility>
#include <vector>

namespace useg {

using Index = Eigen::Index;

template <class S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <class S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using RowMatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Dense tensor of rank 1..4 over a flat Eigen array.
///
/// Layout is row-major in the logical index order, so a rank-4 tensor is
/// NCHW with W fastest. Value semantics throughout: copies are deep.
template <class S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;
  explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
    data_ = ArrayX<S>::Zero(compute_size(shape_));
  }
  Tensor(std::initializer_list<Index> shape) : Tensor(std::vector<Index>(shape)) {}

  static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<Index> shape, S value) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = ArrayX<S>::Constant(compute_size(t.shape_), value);
    return t;
  }

  static Tensor scalar(S value) { return full({1}, value); }

  static Tensor from_flat(std::vector<Index> shape, ArrayX<S> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    assert(t.data_.size() == compute_size(t.shape_));
    return t;
  }

  Index size() const { return data_.size(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const std::vector<Index>& shape() const { return shape_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  ArrayX<S>& flat() { return data_; }
  const ArrayX<S>& flat() const { return data_; }
  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  // Rank-specific element access, used mostly by tests and IO.
  S& at(Index i) { return data_[i]; }
  S at(Index i) const { return data_[i]; }
  S& at(Index i, Index j) {
    assert(rank() == 2);
    return data_[i * shape_[1] + j];
  }
  S at(Index i, Index j) const {
    assert(rank() == 2);
    return data_[i * shape_[1] + j];
  }
  S& at(Index n, Index c, Index h, Index w) {
    assert(rank() == 4);
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  S at(Index n, Index c, Index h, Index w) const {
    assert(rank() == 4);
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(std::vector<Index> shape) const {
    assert(compute_size(shape) == size());
    return from_flat(std::move(shape), data_);
  }

  /// Cast to another scalar type (used by float/double test bridges).
  template <class T>
  Tensor<T> cast() const {
    return Tensor<T>::from_flat(shape_, data_.template cast<T>());
  }

  bool all_finite() const { return data_.isFinite().all(); }

  static Index compute_size(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
  }

 private:
  std::vector<Index> shape_;
  ArrayX<S> data_;
};

/// Map a {Co, Ci*kh*kw} weight tensor (or any rank-n tensor flattened to two
/// trailing groups) as a row-major matrix without copying.
template <class S>
Eigen::Map<RowMatrixX<S>> as_matrix(Tensor<S>& t, Index rows, Index cols) {
  assert(rows * cols == t.size());
  return Eigen::Map<RowMatrixX<S>>(t.data(), rows, cols);
}

template <class S>
Eigen::Map<const RowMatrixX<S>> as_matrix(const Tensor<S>& t, Index rows, Index cols) {
  assert(rows * cols == t.size());
  return Eigen::Map<const RowMatrixX<S>>(t.data(), rows, cols);
}

}  // namespace useg
