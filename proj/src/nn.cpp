#include "dmsr/nn.hpp"

#include <algorithm>
#include <cmath>

namespace dmsr::nn {

namespace {

struct ConvGeometry {
  Index batch, channels, height, width;
  Index out_channels, kh, kw;
  Index stride, padding, groups;
  Index out_h, out_w;

  Index group_in() const { return channels / groups; }
  Index group_out() const { return out_channels / groups; }
  Index patch() const { return group_in() * kh * kw; }
  Index out_pixels() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

template <typename S>
void im2col(const S* x, const ConvGeometry& g, S* cols) {
  const Index hw = g.out_pixels();
  for (Index c = 0; c < g.group_in(); ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        S* row = cols + ((c * g.kh + ki) * g.kw + kj) * hw;
        const S* plane = x + c * g.height * g.width;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + ki;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + kj;
            row[oy * g.out_w + ox] =
                (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width) ? plane[iy * g.width + ix] : S(0);
          }
        }
      }
}

template <typename S>
void col2im(const S* cols, const ConvGeometry& g, S* x) {
  const Index hw = g.out_pixels();
  for (Index c = 0; c < g.group_in(); ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        const S* row = cols + ((c * g.kh + ki) * g.kw + kj) * hw;
        S* plane = x + c * g.height * g.width;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.height) continue;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.width) plane[iy * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> weight, std::optional<Var<S>> bias, Conv2dOptions options) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4)
    throw ShapeError("conv2d expects x [B,C,H,W] and weight [O,C/g,kh,kw], got " + to_string(xs) + " and " +
                     to_string(ws));
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], options.stride, options.padding, options.groups, 0, 0};
  if (g.groups < 1 || g.channels % g.groups != 0 || g.out_channels % g.groups != 0)
    throw ShapeError("conv2d: channel counts not divisible by groups");
  if (ws[1] != g.group_in())
    throw ShapeError("conv2d: input has " + std::to_string(g.channels) + " channels but weight expects " +
                     std::to_string(ws[1] * g.groups));
  if (g.stride < 1 || g.padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  const Index span_h = g.height + 2 * g.padding - g.kh;
  const Index span_w = g.width + 2 * g.padding - g.kw;
  if (span_h < 0 || span_w < 0)
    throw ShapeError("conv2d: kernel larger than padded input " + to_string(xs));
  g.out_h = span_h / g.stride + 1;
  g.out_w = span_w / g.stride + 1;
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != g.out_channels))
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.out_channels) + "]");

  using Map = typename Tensor<S>::ConstMatrixMap;
  using MutMap = typename Tensor<S>::MatrixMap;
  const Index hw = g.out_pixels();
  const Index in_plane = g.height * g.width;

  Tensor<S> out({g.batch, g.out_channels, g.out_h, g.out_w});
  std::vector<S> cols(static_cast<std::size_t>(g.pointwise() ? 0 : g.patch() * hw));
  const auto& xv = x.value();
  const auto& wv = weight.value();
  for (Index b = 0; b < g.batch; ++b)
    for (Index gr = 0; gr < g.groups; ++gr) {
      const S* xin = xv.data() + (b * g.channels + gr * g.group_in()) * in_plane;
      const S* col_ptr = xin;
      if (!g.pointwise()) {
        im2col(xin, g, cols.data());
        col_ptr = cols.data();
      }
      MutMap(out.data() + (b * g.out_channels + gr * g.group_out()) * hw, g.group_out(), hw).noalias() =
          Map(wv.data() + gr * g.group_out() * g.patch(), g.group_out(), g.patch()) * Map(col_ptr, g.patch(), hw);
    }
  if (bias) {
    const auto& bv = bias->value();
    for (Index b = 0; b < g.batch; ++b)
      for (Index o = 0; o < g.out_channels; ++o)
        MutMap(out.data() + (b * g.out_channels + o) * hw, 1, hw).array() += bv[o];
  }

  std::vector<int> inputs{x.id(), weight.id()};
  if (bias) inputs.push_back(bias->id());
  const int ix = x.id(), iw = weight.id(), ib = bias ? bias->id() : -1;
  return x.tape()->record(OpKind::conv2d, std::move(inputs), std::move(out), [g, ix, iw, ib](Tape<S>& tp, const Tensor<S>& grad) {
    using Map = typename Tensor<S>::ConstMatrixMap;
    using MutMap = typename Tensor<S>::MatrixMap;
    const Index hw = g.out_pixels();
    const Index in_plane = g.height * g.width;
    const auto& xv = tp.value(ix);
    const auto& wv = tp.value(iw);
    const bool need_x = tp.requires_grad(ix);
    const bool need_w = tp.requires_grad(iw);
    Tensor<S> gx = need_x ? Tensor<S>(xv.shape()) : Tensor<S>();
    Tensor<S> gw = need_w ? Tensor<S>(wv.shape()) : Tensor<S>();
    std::vector<S> cols(static_cast<std::size_t>(g.patch() * hw));
    for (Index b = 0; b < g.batch; ++b)
      for (Index gr = 0; gr < g.groups; ++gr) {
        Map gout(grad.data() + (b * g.out_channels + gr * g.group_out()) * hw, g.group_out(), hw);
        const S* xin = xv.data() + (b * g.channels + gr * g.group_in()) * in_plane;
        if (need_w) {
          const S* col_ptr = xin;
          if (!g.pointwise()) {
            im2col(xin, g, cols.data());
            col_ptr = cols.data();
          }
          MutMap(gw.data() + gr * g.group_out() * g.patch(), g.group_out(), g.patch()).noalias() +=
              gout * Map(col_ptr, g.patch(), hw).transpose();
        }
        if (need_x) {
          Map wmat(wv.data() + gr * g.group_out() * g.patch(), g.group_out(), g.patch());
          S* gx_in = gx.data() + (b * g.channels + gr * g.group_in()) * in_plane;
          if (g.pointwise()) {
            MutMap(gx_in, g.patch(), hw).noalias() += wmat.transpose() * gout;
          } else {
            MutMap(cols.data(), g.patch(), hw).noalias() = wmat.transpose() * gout;
            col2im(cols.data(), g, gx_in);
          }
        }
      }
    if (need_x) tp.accumulate(ix, std::move(gx));
    if (need_w) tp.accumulate(iw, std::move(gw));
    if (ib >= 0 && tp.requires_grad(ib)) {
      Tensor<S> gb({g.out_channels});
      for (Index b = 0; b < g.batch; ++b)
        for (Index o = 0; o < g.out_channels; ++o)
          gb[o] += Map(grad.data() + (b * g.out_channels + o) * hw, 1, hw).sum();
      tp.accumulate(ib, std::move(gb));
    }
  });
}

template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps) {
  if (!(eps > S(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  const Index n = x.shape().back();
  if (gamma.value().size() != n || beta.value().size() != n)
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(n) + " entries");
  const Index rows = x.value().size() / n;
  Tensor<S> out(x.shape());
  auto xm = x.value().matrix(rows, n);
  auto ym = out.matrix(rows, n);
  const auto ga = gamma.value().array().transpose();
  const auto be = beta.value().array().transpose();
  for (Index r = 0; r < rows; ++r) {
    const S mu = xm.row(r).mean();
    const S var = (xm.row(r).array() - mu).square().mean();
    const S inv = S(1) / std::sqrt(var + eps);
    ym.row(r) = (((xm.row(r).array() - mu) * inv) * ga + be).matrix();
  }
  const int ix = x.id(), ig = gamma.id(), ibt = beta.id();
  return x.tape()->record(OpKind::layer_norm, {ix, ig, ibt}, std::move(out),
                          [ix, ig, ibt, rows, n, eps](Tape<S>& tp, const Tensor<S>& g) {
                            auto xm = tp.value(ix).matrix(rows, n);
                            auto gm = g.matrix(rows, n);
                            const auto ga = tp.value(ig).array().transpose();
                            Tensor<S> gx(tp.value(ix).shape());
                            Tensor<S> ggamma({n});
                            Tensor<S> gbeta({n});
                            auto gxm = gx.matrix(rows, n);
                            Eigen::Array<S, 1, Eigen::Dynamic> xhat(n), dxhat(n);
                            for (Index r = 0; r < rows; ++r) {
                              const S mu = xm.row(r).mean();
                              const S var = (xm.row(r).array() - mu).square().mean();
                              const S inv = S(1) / std::sqrt(var + eps);
                              xhat = (xm.row(r).array() - mu) * inv;
                              ggamma.array() += (gm.row(r).array() * xhat).transpose();
                              gbeta.array() += gm.row(r).array().transpose();
                              dxhat = gm.row(r).array() * ga;
                              gxm.row(r) = ((inv / static_cast<S>(n)) *
                                            (static_cast<S>(n) * dxhat - dxhat.sum() - xhat * (dxhat * xhat).sum()))
                                               .matrix();
                            }
                            tp.accumulate(ix, std::move(gx));
                            tp.accumulate(ig, std::move(ggamma));
                            tp.accumulate(ibt, std::move(gbeta));
                          });
}

template <typename S>
Var<S> layer_norm_channels(Var<S> x, Var<S> gamma, Var<S> beta, S eps) {
  if (x.shape().size() != 4) throw ShapeError("layer_norm_channels expects [B,C,H,W]");
  auto nhwc = permute(x, {0, 2, 3, 1});
  return permute(layer_norm(nhwc, gamma, beta, eps), {0, 3, 1, 2});
}

template <typename S>
Var<S> linear(Var<S> x, Var<S> weight, std::optional<Var<S>> bias) {
  auto y = matmul(x, weight);
  return bias ? add(y, *bias) : y;
}

template <typename S>
Var<S> window_partition(Var<S> x, Index window) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("window_partition expects [B,H,W,C]");
  if (window < 1 || s[1] % window != 0 || s[2] % window != 0)
    throw ShapeError("window " + std::to_string(window) + " does not divide extents " + to_string(s));
  const Index nh = s[1] / window, nw = s[2] / window;
  auto r = reshape(x, {s[0], nh, window, nw, window, s[3]});
  auto p = permute(r, {0, 1, 3, 2, 4, 5});
  return reshape(p, {s[0] * nh * nw, window * window, s[3]});
}

template <typename S>
Var<S> window_merge(Var<S> windows, Index batch, Index height, Index width, Index window) {
  if (window < 1 || height % window != 0 || width % window != 0)
    throw ShapeError("window " + std::to_string(window) + " does not divide " + std::to_string(height) + "x" +
                     std::to_string(width));
  const Index nh = height / window, nw = width / window;
  const Index c = windows.shape().back();
  auto r = reshape(windows, {batch, nh, nw, window, window, c});
  auto p = permute(r, {0, 1, 3, 2, 4, 5});
  return reshape(p, {batch, height, width, c});
}

template <typename S>
Var<S> cyclic_shift(Var<S> x, Index dy, Index dx) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("cyclic_shift expects [B,H,W,C]");
  const Index b = s[0], h = s[1], w = s[2], c = s[3];
  auto index = std::make_shared<std::vector<Index>>();
  index->reserve(static_cast<std::size_t>(b * h * w * c));
  for (Index n = 0; n < b; ++n)
    for (Index y = 0; y < h; ++y) {
      const Index sy = ((y - dy) % h + h) % h;
      for (Index xx = 0; xx < w; ++xx) {
        const Index sx = ((xx - dx) % w + w) % w;
        for (Index ch = 0; ch < c; ++ch) index->push_back(((n * h + sy) * w + sx) * c + ch);
      }
    }
  return gather(x, s, std::move(index));
}

template <typename S>
Tensor<S> shifted_window_mask(Index height, Index width, Index window, Index shift) {
  if (height % window != 0 || width % window != 0) throw ShapeError("window does not divide mask extents");
  std::vector<int> label(static_cast<std::size_t>(height * width));
  auto region = [&](Index v, Index extent) { return v < extent - window ? 0 : (v < extent - shift ? 1 : 2); };
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      label[static_cast<std::size_t>(y * width + x)] = region(y, height) * 3 + region(x, width);
  const Index nh = height / window, nw = width / window, l = window * window;
  Tensor<S> mask({nh * nw, l, l});
  for (Index wy = 0; wy < nh; ++wy)
    for (Index wx = 0; wx < nw; ++wx) {
      const Index win = wy * nw + wx;
      for (Index i = 0; i < l; ++i)
        for (Index j = 0; j < l; ++j) {
          const Index yi = wy * window + i / window, xi = wx * window + i % window;
          const Index yj = wy * window + j / window, xj = wx * window + j % window;
          const bool same = label[static_cast<std::size_t>(yi * width + xi)] == label[static_cast<std::size_t>(yj * width + xj)];
          mask[(win * l + i) * l + j] = same ? S(0) : S(-100);
        }
    }
  return mask;
}

std::vector<Index> relative_position_index(Index window) {
  const Index l = window * window;
  std::vector<Index> index(static_cast<std::size_t>(l * l));
  for (Index i = 0; i < l; ++i)
    for (Index j = 0; j < l; ++j) {
      const Index dy = i / window - j / window + window - 1;
      const Index dx = i % window - j % window + window - 1;
      index[static_cast<std::size_t>(i * l + j)] = dy * (2 * window - 1) + dx;
    }
  return index;
}

template <typename S>
Var<S> multi_head_attention(Var<S> x, const AttentionParams<S>& p, std::optional<Var<S>> mask, Var<S>* weights_out) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("attention expects [N,L,C]");
  const Index n = s[0], l = s[1], c = s[2];
  const Index heads = p.num_heads;
  if (heads < 1 || c % heads != 0)
    throw ShapeError("embed dim " + std::to_string(c) + " is not divisible by " + std::to_string(heads) + " heads");
  if (p.qkv_weight.shape() != Shape{c, 3 * c}) throw ShapeError("attention: qkv weight must be [C,3C]");
  const Index d = c / heads;

  auto qkv = linear(x, p.qkv_weight, std::optional<Var<S>>(p.qkv_bias));
  qkv = permute(reshape(qkv, {n, l, 3, heads, d}), {2, 0, 3, 1, 4});  // [3,N,h,L,d]
  auto q = reshape(slice(qkv, 0, 0, 1), {n, heads, l, d});
  auto k = reshape(slice(qkv, 0, 1, 1), {n, heads, l, d});
  auto v = reshape(slice(qkv, 0, 2, 1), {n, heads, l, d});

  q = scale(q, S(1) / std::sqrt(static_cast<S>(d)));
  auto scores = matmul(q, permute(k, {0, 1, 3, 2}));  // [N,h,L,L]

  if (p.relative_bias_table) {
    if (p.window * p.window != l) throw ShapeError("relative position bias needs window*window == tokens");
    auto rel = relative_position_index(p.window);
    auto index = std::make_shared<std::vector<Index>>();
    index->reserve(rel.size() * static_cast<std::size_t>(heads));
    for (Index r : rel)
      for (Index h = 0; h < heads; ++h) index->push_back(r * heads + h);
    auto bias = gather(*p.relative_bias_table, {l, l, heads}, std::move(index));
    scores = add(scores, reshape(permute(bias, {2, 0, 1}), {1, heads, l, l}));
  }
  if (mask) {
    const Index nw = mask->shape()[0];
    if (n % nw != 0) throw ShapeError("attention: batch of windows is not a multiple of mask windows");
    auto grouped = reshape(scores, {n / nw, nw, heads, l, l});
    scores = reshape(add(grouped, reshape(*mask, {1, nw, 1, l, l})), {n, heads, l, l});
  }
  auto attn = softmax(scores);
  if (weights_out) *weights_out = attn;
  auto out = matmul(attn, v);                                // [N,h,L,d]
  out = reshape(permute(out, {0, 2, 1, 3}), {n, l, c});      // [N,L,C]
  return linear(out, p.proj_weight, std::optional<Var<S>>(p.proj_bias));
}

template <typename S>
Var<S> pixel_unshuffle(Var<S> x, Index r) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("pixel_unshuffle expects [B,C,H,W]");
  if (r < 1 || s[2] % r != 0 || s[3] % r != 0)
    throw ShapeError("factor " + std::to_string(r) + " does not divide extents " + to_string(s));
  auto t = reshape(x, {s[0], s[1], s[2] / r, r, s[3] / r, r});
  t = permute(t, {0, 1, 3, 5, 2, 4});
  return reshape(t, {s[0], s[1] * r * r, s[2] / r, s[3] / r});
}

template <typename S>
Var<S> pixel_shuffle(Var<S> x, Index r) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("pixel_shuffle expects [B,C,H,W]");
  if (r < 1 || s[1] % (r * r) != 0)
    throw ShapeError("channels " + std::to_string(s[1]) + " not divisible by " + std::to_string(r * r));
  const Index c = s[1] / (r * r);
  auto t = reshape(x, {s[0], c, r, r, s[2], s[3]});
  t = permute(t, {0, 1, 4, 2, 5, 3});
  return reshape(t, {s[0], c, s[2] * r, s[3] * r});
}

template <typename S>
Var<S> adaptive_avg_pool_global(Var<S> x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("adaptive_avg_pool_global expects [B,C,H,W]");
  auto flat = reshape(x, {s[0], s[1], s[2] * s[3]});
  return reshape(mean_axis(flat, 2), {s[0], s[1], 1, 1});
}

namespace detail {

template <typename S>
BilinearTap<S>::BilinearTap(S y, S x, Index height, Index width) {
  const S fy = std::floor(y), fx = std::floor(x);
  wy = y - fy;
  wx = x - fx;
  const Index y0 = static_cast<Index>(fy), x0 = static_cast<Index>(fx);
  auto cy = [height](Index v) { return std::clamp<Index>(v, 0, height - 1); };
  auto cx = [width](Index v) { return std::clamp<Index>(v, 0, width - 1); };
  i00 = cy(y0) * width + cx(x0);
  i01 = cy(y0) * width + cx(x0 + 1);
  i10 = cy(y0 + 1) * width + cx(x0);
  i11 = cy(y0 + 1) * width + cx(x0 + 1);
}

template struct BilinearTap<float>;
template struct BilinearTap<double>;

}  // namespace detail

template <typename S>
Var<S> bilinear_sample(Var<S> x, Var<S> coords) {
  const Shape& xs = x.shape();
  const Shape& cs = coords.shape();
  if (xs.size() != 4 || cs.size() != 4 || cs[3] != 2 || cs[0] != xs[0])
    throw ShapeError("bilinear_sample expects x [B,C,H,W] and coords [B,Ho,Wo,2]");
  const Index b = xs[0], c = xs[1], h = xs[2], w = xs[3], ho = cs[1], wo = cs[2];
  if (!coords.value().all_finite()) throw std::domain_error("bilinear_sample: non-finite coordinates");
  Tensor<S> out({b, c, ho, wo});
  const auto& xv = x.value();
  const auto& cv = coords.value();
  for (Index n = 0; n < b; ++n)
    for (Index p = 0; p < ho * wo; ++p) {
      const S* pos = cv.data() + (n * ho * wo + p) * 2;
      detail::BilinearTap<S> tap(pos[0], pos[1], h, w);
      for (Index ch = 0; ch < c; ++ch) out[(n * c + ch) * ho * wo + p] = tap.sample(xv.data() + (n * c + ch) * h * w);
    }
  const int ix = x.id(), ic = coords.id();
  return x.tape()->record(OpKind::bilinear_sample, {ix, ic}, std::move(out),
                          [ix, ic, b, c, h, w, ho, wo](Tape<S>& tp, const Tensor<S>& g) {
                            const auto& xv = tp.value(ix);
                            const auto& cv = tp.value(ic);
                            const bool need_x = tp.requires_grad(ix), need_c = tp.requires_grad(ic);
                            Tensor<S> gx = need_x ? Tensor<S>(xv.shape()) : Tensor<S>();
                            Tensor<S> gc = need_c ? Tensor<S>(cv.shape()) : Tensor<S>();
                            for (Index n = 0; n < b; ++n)
                              for (Index p = 0; p < ho * wo; ++p) {
                                const S* pos = cv.data() + (n * ho * wo + p) * 2;
                                detail::BilinearTap<S> tap(pos[0], pos[1], h, w);
                                for (Index ch = 0; ch < c; ++ch) {
                                  const S go = g[(n * c + ch) * ho * wo + p];
                                  const S* plane = xv.data() + (n * c + ch) * h * w;
                                  if (need_x) tap.scatter(gx.data() + (n * c + ch) * h * w, go);
                                  if (need_c) {
                                    gc[(n * ho * wo + p) * 2] += go * tap.d_dy(plane);
                                    gc[(n * ho * wo + p) * 2 + 1] += go * tap.d_dx(plane);
                                  }
                                }
                              }
                            if (need_x) tp.accumulate(ix, std::move(gx));
                            if (need_c) tp.accumulate(ic, std::move(gc));
                          });
}

#define DMSR_INSTANTIATE_NN(S)                                                                 \
  template Var<S> conv2d(Var<S>, Var<S>, std::optional<Var<S>>, Conv2dOptions);                \
  template Var<S> layer_norm(Var<S>, Var<S>, Var<S>, S);                                       \
  template Var<S> layer_norm_channels(Var<S>, Var<S>, Var<S>, S);                              \
  template Var<S> linear(Var<S>, Var<S>, std::optional<Var<S>>);                               \
  template Var<S> window_partition(Var<S>, Index);                                             \
  template Var<S> window_merge(Var<S>, Index, Index, Index, Index);                            \
  template Var<S> cyclic_shift(Var<S>, Index, Index);                                          \
  template Tensor<S> shifted_window_mask(Index, Index, Index, Index);                          \
  template Var<S> multi_head_attention(Var<S>, const AttentionParams<S>&, std::optional<Var<S>>, Var<S>*); \
  template Var<S> pixel_unshuffle(Var<S>, Index);                                              \
  template Var<S> pixel_shuffle(Var<S>, Index);                                                \
  template Var<S> adaptive_avg_pool_global(Var<S>);                                            \
  template Var<S> bilinear_sample(Var<S>, Var<S>);

DMSR_INSTANTIATE_NN(float)
DMSR_INSTANTIATE_NN(double)

}  // namespace dmsr::nn
