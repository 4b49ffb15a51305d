#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pm/common.hpp"

namespace pm::ndgrad {

template <class T>
using RowMajorMatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMajorMatrix = RowMajorMatrixT<Real>;

using Shape = std::array<std::size_t, 2>;

std::string to_string(const Shape& shape);

// Dense row-major 2-D array. Scalars are 1x1, row vectors 1xN.
template <class T>
class BasicTensor {
 public:
  using MatrixMap = Eigen::Map<RowMajorMatrixT<T>>;
  using ConstMatrixMap = Eigen::Map<const RowMajorMatrixT<T>>;

  BasicTensor() = default;
  BasicTensor(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicTensor(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape()));
    }
  }

  static BasicTensor scalar(T value) { return BasicTensor(1, 1, value); }
  static BasicTensor row(std::span<const T> values) {
    return BasicTensor(1, values.size(), std::vector<T>(values.begin(), values.end()));
  }
  template <class Derived>
  static BasicTensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    BasicTensor t(std::size_t(m.rows()), std::size_t(m.cols()));
    t.mat() = m.template cast<T>();
    return t;
  }
  template <class U>
  static BasicTensor converted(const BasicTensor<U>& other) {
    BasicTensor t(other.rows(), other.cols());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(other[i]);
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  Shape shape() const { return {rows_, cols_}; }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  // Value of a 1x1 tensor.
  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return data_[0];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::span<const T> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  MatrixMap mat() { return {data_.data(), Eigen::Index(rows_), Eigen::Index(cols_)}; }
  ConstMatrixMap mat() const {
    return {data_.data(), Eigen::Index(rows_), Eigen::Index(cols_)};
  }

  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> to_matrix() const { return mat(); }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Tensor = BasicTensor<Real>;
// Used only by the finite-difference oracle.
using ExtendedTensor = BasicTensor<long double>;

}  // namespace pm::ndgrad
