#pragma once

#include "dmsr/autodiff.hpp"

#include <Eigen/Core>

namespace dmsr {

inline constexpr double kCatmullRomA = -0.5;

/// Keys cubic convolution kernel.
double cubic_kernel(double x, double a = kCatmullRomA);

/// Dense (out x in) resampling matrix along one axis. Pixel centres are
/// aligned, the kernel support widens by in/out when downsampling, indices
/// past the border clamp, and every row sums to 1.
Eigen::MatrixXd resize_weights(Index in, Index out, double a = kCatmullRomA);

/// Bicubic resize of x: [B,C,H,W] on a tape (differentiable in x).
template <typename S>
Var<S> bicubic_resize(Var<S> x, Index out_h, Index out_w);

/// Bicubic resize of a [C,H,W] or [B,C,H,W] tensor.
template <typename S>
Tensor<S> bicubic_resize(const Tensor<S>& x, Index out_h, Index out_w);

}  // namespace dmsr
