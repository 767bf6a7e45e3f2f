#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmsr {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
Index num_elements(const Shape& shape);
std::vector<Index> row_major_strides(const Shape& shape);

/// Broadcast shape of two operands. Shapes are aligned at the trailing axis and
/// an extent of 1 stretches to match the other operand.
Shape broadcast_shapes(const Shape& a, const Shape& b);

/// Dense row-major tensor. Value semantics: copies are deep.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() : shape_{1}, data_(Array::Zero(1)) {}
  explicit Tensor(Shape shape) : Tensor(std::move(shape), Scalar(0)) {}
  Tensor(Shape shape, Scalar fill);
  Tensor(Shape shape, std::initializer_list<Scalar> values);
  Tensor(Shape shape, Array data);

  static Tensor scalar(Scalar value) { return Tensor(Shape{1}, value); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor zeros_like(const Tensor& t) { return zeros(t.shape()); }

  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = static_cast<Scalar>(dist(rng));
    return t;
  }

  template <typename Rng>
  static Tensor normal(Shape shape, Rng& rng, Scalar mean, Scalar stddev) {
    std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = static_cast<Scalar>(dist(rng));
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const;
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> span() const { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }

  /// View of the flat payload as a rows x cols row-major matrix.
  MatrixMap matrix(Index rows, Index cols);
  ConstMatrixMap matrix(Index rows, Index cols) const;

  Scalar& operator[](Index i) { return data_[i]; }
  const Scalar& operator[](Index i) const { return data_[i]; }

  Scalar& at(std::initializer_list<Index> idx) { return data_[offset(idx)]; }
  const Scalar& at(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }

  Scalar item() const;
  bool all_finite() const { return data_.allFinite(); }

  Tensor reshaped(Shape shape) const;

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  Index offset(std::initializer_list<Index> idx) const;

  Shape shape_;
  Array data_;
};

/// Sum `t` down to `target` by reducing the axes broadcasting stretched.
template <typename Scalar>
Tensor<Scalar> sum_to_shape(const Tensor<Scalar>& t, const Shape& target);

/// Materialise `t` at a broadcast-compatible larger shape.
template <typename Scalar>
Tensor<Scalar> broadcast_to(const Tensor<Scalar>& t, const Shape& target);

}  // namespace dmsr
