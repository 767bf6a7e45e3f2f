#pragma once

#include "dmsr/autodiff.hpp"

#include <optional>

namespace dmsr::nn {

struct Conv2dOptions {
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
};

/// x: [B,C,H,W], weight: [out_ch, C/groups, kh, kw], bias: [out_ch].
/// Output extents are (H + 2*padding - kh)/stride + 1, likewise for W.
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> weight, std::optional<Var<S>> bias, Conv2dOptions options = {});

/// Normalises over the last axis, then applies gamma/beta ([C] each).
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5));

/// Channel-wise layer norm for [B,C,H,W] maps: every pixel is normalised over C.
template <typename S>
Var<S> layer_norm_channels(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5));

/// x[..., in] * weight[in, out] + bias[out].
template <typename S>
Var<S> linear(Var<S> x, Var<S> weight, std::optional<Var<S>> bias);

/// [B,H,W,C] -> [B*(H/w)*(W/w), w*w, C]; windows in raster order.
template <typename S>
Var<S> window_partition(Var<S> x, Index window);

/// Inverse of window_partition for an image of batch B and extents H x W.
template <typename S>
Var<S> window_merge(Var<S> windows, Index batch, Index height, Index width, Index window);

/// Cyclic roll of a [B,H,W,C] map: out[y][x] = in[(y - dy) mod H][(x - dx) mod W].
template <typename S>
Var<S> cyclic_shift(Var<S> x, Index dy, Index dx);

/// Additive attention mask [nW, w*w, w*w] for a shifted window grid: 0 between
/// tokens from the same pre-shift region, -100 otherwise.
template <typename S>
Tensor<S> shifted_window_mask(Index height, Index width, Index window, Index shift);

/// Relative-position lookup for a window: entry (i, j) indexes a table of
/// (2w-1)^2 rows.
std::vector<Index> relative_position_index(Index window);

template <typename S>
struct AttentionParams {
  Var<S> qkv_weight;  // [C, 3C]
  Var<S> qkv_bias;    // [3C]
  Var<S> proj_weight; // [C, C]
  Var<S> proj_bias;   // [C]
  Index num_heads = 1;
  std::optional<Var<S>> relative_bias_table;  // [(2w-1)^2, heads]
  Index window = 0;                            // needed with the bias table
};

/// Multi-head self-attention over x: [N, L, C]. `mask`, if given, is
/// [nW, L, L] and N must be a multiple of nW. When `weights_out` is set it
/// receives the post-softmax attention tensor [N, heads, L, L].
template <typename S>
Var<S> multi_head_attention(Var<S> x, const AttentionParams<S>& p, std::optional<Var<S>> mask = std::nullopt,
                            Var<S>* weights_out = nullptr);

/// Space-to-depth: [B,C,H,W] -> [B,C*r*r,H/r,W/r], channel c*r*r + i*r + j
/// holds pixel (y*r + i, x*r + j) of channel c.
template <typename S>
Var<S> pixel_unshuffle(Var<S> x, Index r);

/// Depth-to-space, the exact inverse of pixel_unshuffle.
template <typename S>
Var<S> pixel_shuffle(Var<S> x, Index r);

/// Per-channel mean: [B,C,H,W] -> [B,C,1,1].
template <typename S>
Var<S> adaptive_avg_pool_global(Var<S> x);

/// Samples x: [B,C,H,W] at continuous pixel coordinates coords: [B,Ho,Wo,2]
/// holding (y, x). Neighbours outside the image are clamped to the border.
/// Differentiable with respect to both x and coords.
template <typename S>
Var<S> bilinear_sample(Var<S> x, Var<S> coords);

namespace detail {

/// Bilinear lookup with border clamping on a single H x W plane.
template <typename S>
struct BilinearTap {
  Index i00, i01, i10, i11;
  S wy, wx;  // fractional parts

  BilinearTap(S y, S x, Index height, Index width);
  S sample(const S* plane) const {
    return (S(1) - wy) * ((S(1) - wx) * plane[i00] + wx * plane[i01]) + wy * ((S(1) - wx) * plane[i10] + wx * plane[i11]);
  }
  S d_dy(const S* plane) const {
    return ((S(1) - wx) * plane[i10] + wx * plane[i11]) - ((S(1) - wx) * plane[i00] + wx * plane[i01]);
  }
  S d_dx(const S* plane) const {
    return (S(1) - wy) * (plane[i01] - plane[i00]) + wy * (plane[i11] - plane[i10]);
  }
  void scatter(S* plane, S g) const {
    plane[i00] += g * (S(1) - wy) * (S(1) - wx);
    plane[i01] += g * (S(1) - wy) * wx;
    plane[i10] += g * wy * (S(1) - wx);
    plane[i11] += g * wy * wx;
  }
};

}  // namespace detail

}  // namespace dmsr::nn
