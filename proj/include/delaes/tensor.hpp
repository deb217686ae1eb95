// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace delaes {

/// Dense row-major array of rank 1 or 2. Model code uses Tensor<float>;
/// Tensor<double> exists for finite-difference gradient checking.
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using MatrixMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap =
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using VectorMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
  using ConstVectorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, T fill = T{0})
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Tensor(std::initializer_list<std::size_t> shape, T fill = T{0})
      : Tensor(std::vector<std::size_t>(shape), fill) {}

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T{0}) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor vector(std::size_t n, T fill = T{0}) { return Tensor({n}, fill); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  MatrixMap mat() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data_.data(), rows(), cols()); }
  VectorMap vec() { return VectorMap(data_.data(), size()); }
  ConstVectorMap vec() const { return ConstVectorMap(data_.data(), size()); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void set_zero() { fill(T{0}); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>{});
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

}  // namespace delaes
