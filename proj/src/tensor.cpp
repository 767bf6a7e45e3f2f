#include "dmsr/tensor.hpp"

#include "dmsr/detail/broadcast.hpp"

#include <sstream>

namespace dmsr {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index num_elements(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::vector<Index> row_major_strides(const Shape& shape) {
  std::vector<Index> strides(shape.size(), 1);
  for (Index i = static_cast<Index>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const Index ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const Index eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcastable");
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace detail {

std::vector<Index> broadcast_source_index(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  if (in.size() > rank) throw ShapeError("cannot broadcast " + to_string(in) + " to " + to_string(out));
  const std::size_t lead = rank - in.size();
  std::vector<Index> in_strides(rank, 0);
  const auto src = row_major_strides(in);
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] != out[lead + i] && in[i] != 1)
      throw ShapeError("cannot broadcast " + to_string(in) + " to " + to_string(out));
    in_strides[lead + i] = in[i] == 1 ? 0 : src[i];
  }

  const Index total = num_elements(out);
  std::vector<Index> map(static_cast<std::size_t>(total));
  std::vector<Index> counter(rank, 0);
  Index src_offset = 0;
  for (Index flat = 0; flat < total; ++flat) {
    map[static_cast<std::size_t>(flat)] = src_offset;
    for (Index axis = static_cast<Index>(rank) - 1; axis >= 0; --axis) {
      if (++counter[axis] < out[axis]) {
        src_offset += in_strides[axis];
        break;
      }
      src_offset -= in_strides[axis] * (out[axis] - 1);
      counter[axis] = 0;
    }
  }
  return map;
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
  for (Index e : shape_)
    if (e < 1) throw ShapeError("tensor extents must be >= 1, got " + to_string(shape_));
  if (shape_.empty()) shape_ = {1};
  data_ = Array::Constant(num_elements(shape_), fill);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape)) {
  if (static_cast<Index>(values.size()) != size())
    throw ShapeError("initializer has " + std::to_string(values.size()) + " values for shape " +
                     to_string(shape_));
  Index i = 0;
  for (Scalar v : values) data_[i++] = v;
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (Index e : shape_)
    if (e < 1) throw ShapeError("tensor extents must be >= 1, got " + to_string(shape_));
  if (shape_.empty()) shape_ = {1};
  if (num_elements(shape_) != data_.size())
    throw ShapeError("payload of " + std::to_string(data_.size()) + " values does not fit shape " +
                     to_string(shape_));
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
typename Tensor<Scalar>::MatrixMap Tensor<Scalar>::matrix(Index rows, Index cols) {
  if (rows * cols != size()) throw ShapeError("matrix view does not cover tensor " + to_string(shape_));
  return MatrixMap(data_.data(), rows, cols);
}

template <typename Scalar>
typename Tensor<Scalar>::ConstMatrixMap Tensor<Scalar>::matrix(Index rows, Index cols) const {
  if (rows * cols != size()) throw ShapeError("matrix view does not cover tensor " + to_string(shape_));
  return ConstMatrixMap(data_.data(), rows, cols);
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  if (num_elements(shape) != size())
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

template <typename Scalar>
Index Tensor<Scalar>::offset(std::initializer_list<Index> idx) const {
  if (static_cast<Index>(idx.size()) != rank())
    throw ShapeError("index rank mismatch for shape " + to_string(shape_));
  Index off = 0;
  std::size_t axis = 0;
  for (Index i : idx) {
    if (i < 0 || i >= shape_[axis]) throw std::out_of_range("tensor index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

template <typename Scalar>
Tensor<Scalar> sum_to_shape(const Tensor<Scalar>& t, const Shape& target) {
  if (t.shape() == target) return t;
  const auto map = detail::broadcast_source_index(target, t.shape());
  Tensor<Scalar> out(target);
  for (Index i = 0; i < t.size(); ++i) out[map[static_cast<std::size_t>(i)]] += t[i];
  return out;
}

template <typename Scalar>
Tensor<Scalar> broadcast_to(const Tensor<Scalar>& t, const Shape& target) {
  if (t.shape() == target) return t;
  const auto map = detail::broadcast_source_index(t.shape(), target);
  Tensor<Scalar> out(target);
  for (Index i = 0; i < out.size(); ++i) out[i] = t[map[static_cast<std::size_t>(i)]];
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> sum_to_shape(const Tensor<float>&, const Shape&);
template Tensor<double> sum_to_shape(const Tensor<double>&, const Shape&);
template Tensor<float> broadcast_to(const Tensor<float>&, const Shape&);
template Tensor<double> broadcast_to(const Tensor<double>&, const Shape&);

}  // namespace dmsr
