#include "dmsr/resample.hpp"

#include <algorithm>
#include <cmath>

namespace dmsr {

double cubic_kernel(double x, double a) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

Eigen::MatrixXd resize_weights(Index in, Index out, double a) {
  if (in < 1 || out < 1) throw ShapeError("resize extents must be >= 1");
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  const double stretch = std::max(ratio, 1.0);
  const double support = 2.0 * stretch;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out, in);
  for (Index o = 0; o < out; ++o) {
    const double center = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    const auto lo = static_cast<Index>(std::floor(center - support));
    const auto hi = static_cast<Index>(std::ceil(center + support));
    for (Index j = lo; j <= hi; ++j) {
      const double v = cubic_kernel((static_cast<double>(j) - center) / stretch, a);
      if (v != 0.0) w(o, std::clamp<Index>(j, 0, in - 1)) += v;
    }
    w.row(o) /= w.row(o).sum();
  }
  return w;
}

template <typename S>
Var<S> bicubic_resize(Var<S> x, Index out_h, Index out_w) {
  const Shape s = x.shape();
  if (s.size() != 4) throw ShapeError("bicubic_resize expects [B,C,H,W], got " + to_string(s));
  if (s[2] == out_h && s[3] == out_w) return x;
  auto& tape = *x.tape();
  using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Matrix rw = resize_weights(s[3], out_w).transpose().cast<S>();  // [W, W']
  const Matrix rh = resize_weights(s[2], out_h).transpose().cast<S>();  // [H, H']
  Tensor<S> rw_t({s[3], out_w});
  rw_t.matrix(s[3], out_w) = rw;
  Tensor<S> rh_t({s[2], out_h});
  rh_t.matrix(s[2], out_h) = rh;

  auto y = matmul(x, tape.constant(std::move(rw_t)));              // [B,C,H,W']
  y = matmul(permute(y, {0, 1, 3, 2}), tape.constant(std::move(rh_t)));  // [B,C,W',H']
  return permute(y, {0, 1, 3, 2});
}

template <typename S>
Tensor<S> bicubic_resize(const Tensor<S>& x, Index out_h, Index out_w) {
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) throw ShapeError("bicubic_resize expects [C,H,W] or [B,C,H,W]");
  Tape<S> tape;
  const Shape s4 = batched ? x.shape() : Shape{1, x.dim(0), x.dim(1), x.dim(2)};
  auto y = bicubic_resize(tape.constant(x.reshaped(s4)), out_h, out_w).value();
  if (batched) return y;
  return y.reshaped({s4[1], out_h, out_w});
}

template Var<float> bicubic_resize(Var<float>, Index, Index);
template Var<double> bicubic_resize(Var<double>, Index, Index);
template Tensor<float> bicubic_resize(const Tensor<float>&, Index, Index);
template Tensor<double> bicubic_resize(const Tensor<double>&, Index, Index);

}  // namespace dmsr
