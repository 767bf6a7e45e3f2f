#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace dmsr::testing {

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const Index m = a.dim(0), p = a.dim(1), n = b.dim(1);
  Tensor<double> c({m, n});
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      double s = 0;
      for (Index q = 0; q < p; ++q) s += a.at({i, q}) * b.at({q, j});
      c.at({i, j}) = s;
    }
  return c;
}

Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias,
                            Index stride, Index padding, Index groups) {
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index O = w.dim(0), Cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const Index OH = (H + 2 * padding - KH) / stride + 1, OW = (W + 2 * padding - KW) / stride + 1;
  const Index out_per_group = O / groups;
  (void)C;
  Tensor<double> y({B, O, OH, OW});
  for (Index b = 0; b < B; ++b)
    for (Index o = 0; o < O; ++o)
      for (Index oy = 0; oy < OH; ++oy)
        for (Index ox = 0; ox < OW; ++ox) {
          double s = bias ? (*bias)[o] : 0.0;
          const Index g = o / out_per_group;
          for (Index c = 0; c < Cg; ++c)
            for (Index ky = 0; ky < KH; ++ky)
              for (Index kx = 0; kx < KW; ++kx) {
                const Index iy = oy * stride + ky - padding, ix = ox * stride + kx - padding;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                s += w.at({o, c, ky, kx}) * x.at({b, g * Cg + c, iy, ix});
              }
          y.at({b, o, oy, ox}) = s;
        }
  return y;
}

double naive_bilinear(const double* plane, Index height, Index width, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  const Index y0 = static_cast<Index>(std::floor(y)), x0 = static_cast<Index>(std::floor(x));
  const Index y1 = std::min(y0 + 1, height - 1), x1 = std::min(x0 + 1, width - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  auto at = [&](Index yy, Index xx) { return plane[yy * width + xx]; };
  return (1 - fy) * (1 - fx) * at(y0, x0) + (1 - fy) * fx * at(y0, x1) + fy * (1 - fx) * at(y1, x0) +
         fy * fx * at(y1, x1);
}

Tensor<double> naive_joint_filter(const Tensor<double>& target, const Tensor<double>& weights,
                                  const Tensor<double>& offsets, int k) {
  const Index B = target.dim(0), H = target.dim(2), W = target.dim(3);
  const int r = k / 2;
  Tensor<double> out({B, 1, H, W});
  for (Index b = 0; b < B; ++b) {
    const double* plane = target.data() + b * H * W;
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        double s = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const Index t = i * k + j;
            const double dy = offsets.at({b, 2 * t, y, x}), dx = offsets.at({b, 2 * t + 1, y, x});
            const double v = naive_bilinear(plane, H, W, static_cast<double>(y + i - r) + dy,
                                            static_cast<double>(x + j - r) + dx);
            s += weights.at({b, t, y, x}) * v;
          }
        out.at({b, 0, y, x}) = s;
      }
  }
  return out;
}

}  // namespace dmsr::testing
