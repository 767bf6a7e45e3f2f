#include "dmsr/model.hpp"

#include "dmsr/naf.hpp"
#include "dmsr/nn.hpp"
#include "dmsr/resample.hpp"
#include "dmsr/swin.hpp"

namespace dmsr::model {

namespace {

// Raw weight logits of the centre tap start high and the rest low, so a fresh
// model filters with a near-delta kernel (i.e. starts close to bicubic).
constexpr double kCentreTapLogit = 2.0;
constexpr double kHeadOutputGain = 0.1;

template <typename S>
Var<S> conv3x3(Binding<S>& bind, const std::string& name, Var<S> x) {
  return nn::conv2d(x, bind(name + ".weight"), std::optional<Var<S>>(bind(name + ".bias")), {1, 1, 1});
}

// x - mean over axis 1 + 1/n for x [B,n,H,W]. Each output is formed in double
// and rounded once, so the n entries at a pixel sum to 1 within n half-ulps.
template <typename S>
Var<S> centre_taps(Var<S> x) {
  const Shape& s = x.shape();
  const Index b = s[0], n = s[1], hw = s[2] * s[3];
  const auto& xv = x.value();
  Tensor<S> out(s);
  for (Index i = 0; i < b; ++i)
    for (Index p = 0; p < hw; ++p) {
      double mean = 0;
      for (Index t = 0; t < n; ++t) mean += static_cast<double>(xv[(i * n + t) * hw + p]);
      mean /= static_cast<double>(n);
      for (Index t = 0; t < n; ++t) {
        const Index at = (i * n + t) * hw + p;
        out[at] = static_cast<S>(static_cast<double>(xv[at]) - mean + 1.0 / static_cast<double>(n));
      }
    }
  const int ix = x.id();
  return x.tape()->record(OpKind::centre_taps, {ix}, std::move(out), [ix, b, n, hw](Tape<S>& tp, const Tensor<S>& g) {
    Tensor<S> gx(tp.value(ix).shape());
    for (Index i = 0; i < b; ++i)
      for (Index p = 0; p < hw; ++p) {
        double mean = 0;
        for (Index t = 0; t < n; ++t) mean += static_cast<double>(g[(i * n + t) * hw + p]);
        mean /= static_cast<double>(n);
        for (Index t = 0; t < n; ++t) {
          const Index at = (i * n + t) * hw + p;
          gx[at] = static_cast<S>(static_cast<double>(g[at]) - mean);
        }
      }
    tp.accumulate(ix, std::move(gx));
  });
}

template <typename S>
void check_pair(Var<S> a, Var<S> b, Index expected_channels, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": guidance " + to_string(a.shape()) + " and target " + to_string(b.shape()) +
                     " differ");
  if (a.shape().size() != 4 || a.shape()[1] != expected_channels)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(expected_channels) + " channels, got " +
                     to_string(a.shape()));
}

}  // namespace

int branch_in_channels(const ModelConfig& cfg, const std::string& branch) {
  if (branch == kGuidanceBranch) return 3 * cfg.subpixels();
  if (branch == kTargetBranch) return cfg.subpixels();
  throw std::invalid_argument("unknown branch '" + branch + "'");
}

template <typename S>
void init_branch(ParamStore<S>& params, const std::string& branch, const ModelConfig& cfg, Initializer& init) {
  const Index c = cfg.embed_dim;
  const Index in = branch_in_channels(cfg, branch);
  const Index taps = cfg.taps();
  const Index sub = cfg.subpixels();

  params.add(branch + ".stem.weight", init.fan_in_uniform<S>({c, in, 3, 3}, in * 9));
  params.add(branch + ".stem.bias", Tensor<S>::zeros({c}));
  if (cfg.backbone == Backbone::swin)
    swin::init_backbone(params, branch + ".backbone", cfg, init);
  else
    naf::init_backbone(params, branch + ".backbone", cfg, init);

  auto head = [&](const std::string& path, Index out_channels) {
    params.add(path + ".conv1.weight", init.fan_in_uniform<S>({c, c, 3, 3}, c * 9));
    params.add(path + ".conv1.bias", Tensor<S>::zeros({c}));
    auto w = init.fan_in_uniform<S>({out_channels, c, 3, 3}, c * 9);
    w.array() *= S(kHeadOutputGain);
    params.add(path + ".conv2.weight", std::move(w));
    params.add(path + ".conv2.bias", Tensor<S>::zeros({out_channels}));
  };
  head(branch + ".head.weight", sub * taps);
  head(branch + ".head.offset", sub * 2 * taps);

  // Channel t*16 + s is tap t of subpixel s after stitching.
  auto& bias = params.at(branch + ".head.weight.conv2.bias");
  const Index centre = (taps - 1) / 2;
  for (Index t = 0; t < taps; ++t)
    for (Index s = 0; s < sub; ++s) bias[t * sub + s] = S(t == centre ? kCentreTapLogit : -kCentreTapLogit);
}

template <typename S>
ParamStore<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<S> params;
  Initializer init(seed);
  init_branch(params, kGuidanceBranch, cfg, init);
  init_branch(params, kTargetBranch, cfg, init);
  return params;
}

template <typename S>
std::pair<Var<S>, Var<S>> head_convs(Binding<S>& bind, const std::string& branch, Var<S> features,
                                     const ModelConfig& cfg) {
  if (features.shape().size() != 4 || features.shape()[1] != cfg.embed_dim)
    throw ShapeError("head_convs expects [B," + std::to_string(cfg.embed_dim) + ",h,w], got " +
                     to_string(features.shape()));
  auto path = [&](const std::string& name) {
    auto h = conv3x3(bind, name + ".conv1", features);
    h = gelu(h, GeluMode::exact);
    return conv3x3(bind, name + ".conv2", h);
  };
  return {path(branch + ".head.weight"), path(branch + ".head.offset")};
}

template <typename S>
Var<S> combine_weights(Var<S> w_guide, Var<S> w_target, int k, Index resample_factor) {
  const Index taps = static_cast<Index>(k) * k;
  check_pair(w_guide, w_target, taps * resample_factor * resample_factor, "combine_weights");
  auto product = mul(sigmoid(w_guide), sigmoid(w_target));
  auto full = nn::pixel_shuffle(product, resample_factor);  // [B,k*k,H,W]
  return centre_taps(full);
}

template <typename S>
Var<S> combine_offsets(Var<S> o_guide, Var<S> o_target, int k, Index resample_factor) {
  const Index taps = static_cast<Index>(k) * k;
  check_pair(o_guide, o_target, 2 * taps * resample_factor * resample_factor, "combine_offsets");
  return nn::pixel_shuffle(mul(o_guide, o_target), resample_factor);
}

template <typename S>
Var<S> apply_joint_filter(Var<S> target_up, const KernelField<S>& field, int k) {
  const Shape& ts = target_up.shape();
  if (ts.size() != 4 || ts[1] != 1) throw ShapeError("apply_joint_filter expects target [B,1,H,W], got " + to_string(ts));
  const Index b = ts[0], h = ts[2], w = ts[3];
  const Index taps = static_cast<Index>(k) * k;
  if (field.weights.shape() != Shape{b, taps, h, w})
    throw ShapeError("kernel weights must be " + to_string({b, taps, h, w}) + ", got " + to_string(field.weights.shape()));
  if (field.offsets.shape() != Shape{b, 2 * taps, h, w})
    throw ShapeError("kernel offsets must be " + to_string({b, 2 * taps, h, w}) + ", got " +
                     to_string(field.offsets.shape()));
  if (!field.offsets.value().all_finite()) throw std::domain_error("apply_joint_filter: non-finite offsets");
  const Index radius = (k - 1) / 2;
  const Index hw = h * w;

  const auto& tv = target_up.value();
  const auto& wv = field.weights.value();
  const auto& ov = field.offsets.value();
  Tensor<S> out({b, 1, h, w});
  for (Index n = 0; n < b; ++n) {
    const S* plane = tv.data() + n * hw;
    for (Index t = 0; t < taps; ++t) {
      const S base_y = static_cast<S>(t / k - radius), base_x = static_cast<S>(t % k - radius);
      const S* wt = wv.data() + (n * taps + t) * hw;
      const S* dy = ov.data() + (n * 2 * taps + 2 * t) * hw;
      const S* dx = dy + hw;
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          const Index p = y * w + x;
          nn::detail::BilinearTap<S> tap(static_cast<S>(y) + base_y + dy[p], static_cast<S>(x) + base_x + dx[p], h, w);
          out[n * hw + p] += wt[p] * tap.sample(plane);
        }
    }
  }

  const int it = target_up.id(), iw = field.weights.id(), io = field.offsets.id();
  return target_up.tape()->record(
      OpKind::joint_filter, {it, iw, io}, std::move(out), [it, iw, io, b, h, w, k, taps, radius](Tape<S>& tp, const Tensor<S>& g) {
        const Index hw = h * w;
        const auto& tv = tp.value(it);
        const auto& wv = tp.value(iw);
        const auto& ov = tp.value(io);
        const bool need_t = tp.requires_grad(it), need_w = tp.requires_grad(iw), need_o = tp.requires_grad(io);
        Tensor<S> gt = need_t ? Tensor<S>(tv.shape()) : Tensor<S>();
        Tensor<S> gw = need_w ? Tensor<S>(wv.shape()) : Tensor<S>();
        Tensor<S> go = need_o ? Tensor<S>(ov.shape()) : Tensor<S>();
        for (Index n = 0; n < b; ++n) {
          const S* plane = tv.data() + n * hw;
          for (Index t = 0; t < taps; ++t) {
            const S base_y = static_cast<S>(t / k - radius), base_x = static_cast<S>(t % k - radius);
            const Index wbase = (n * taps + t) * hw;
            const Index obase = (n * 2 * taps + 2 * t) * hw;
            for (Index y = 0; y < h; ++y)
              for (Index x = 0; x < w; ++x) {
                const Index p = y * w + x;
                const S gp = g[n * hw + p];
                const S weight = wv[wbase + p];
                nn::detail::BilinearTap<S> tap(static_cast<S>(y) + base_y + ov[obase + p],
                                               static_cast<S>(x) + base_x + ov[obase + hw + p], h, w);
                if (need_t) tap.scatter(gt.data() + n * hw, gp * weight);
                if (need_w) gw[wbase + p] = gp * tap.sample(plane);
                if (need_o) {
                  go[obase + p] = gp * weight * tap.d_dy(plane);
                  go[obase + hw + p] = gp * weight * tap.d_dx(plane);
                }
              }
          }
        }
        if (need_t) tp.accumulate(it, std::move(gt));
        if (need_w) tp.accumulate(iw, std::move(gw));
        if (need_o) tp.accumulate(io, std::move(go));
      });
}

template <typename S>
KernelField<S> identity_field(Tape<S>& tape, Index batch, Index height, Index width, int k) {
  const Index taps = static_cast<Index>(k) * k;
  Tensor<S> weights({batch, taps, height, width});
  const Index centre = (taps - 1) / 2;
  for (Index n = 0; n < batch; ++n)
    for (Index p = 0; p < height * width; ++p) weights[(n * taps + centre) * height * width + p] = S(1);
  return {tape.constant(std::move(weights)), tape.constant(Tensor<S>({batch, 2 * taps, height, width}))};
}

template <typename S>
Var<S> dmsr_forward(Binding<S>& bind, Var<S> guidance_rgb, Var<S> depth_lr, const ModelConfig& cfg,
                    ForwardOptions options) {
  const Shape gs = guidance_rgb.shape();
  const Shape ds = depth_lr.shape();
  if (gs.size() != 4 || gs[1] != 3) throw ShapeError("guidance must be [B,3,H,W], got " + to_string(gs));
  cfg.validate_extents(gs[2], gs[3]);
  const Shape expected_lr{gs[0], 1, gs[2] / cfg.scale, gs[3] / cfg.scale};
  if (ds != expected_lr)
    throw ShapeError("low-resolution depth must be " + to_string(expected_lr) + ", got " + to_string(ds));

  auto& tape = bind.tape();
  const Index h = gs[2], w = gs[3];
  auto target_up = bicubic_resize(depth_lr, h, w);
  if (options.identity_head) return apply_joint_filter(target_up, identity_field(tape, gs[0], h, w, cfg.k), cfg.k);

  const Index r = cfg.resample_factor;
  auto branch = [&](const std::string& name, Var<S> input) {
    ScopeGuard<S> scope(tape, name);
    auto x = conv3x3(bind, name + ".stem", nn::pixel_unshuffle(input, r));
    x = cfg.backbone == Backbone::swin ? swin::backbone_forward(bind, name + ".backbone", x, cfg)
                                       : naf::backbone_forward(bind, name + ".backbone", x, cfg);
    return head_convs(bind, name, x, cfg);
  };
  auto [w_guide, o_guide] = branch(kGuidanceBranch, guidance_rgb);
  auto [w_target, o_target] = branch(kTargetBranch, target_up);

  KernelField<S> field{combine_weights(w_guide, w_target, cfg.k, r), combine_offsets(o_guide, o_target, cfg.k, r)};
  return apply_joint_filter(target_up, field, cfg.k);
}

#define DMSR_INSTANTIATE_MODEL(S)                                                                            \
  template ParamStore<S> init_params<S>(const ModelConfig&, std::uint64_t);                                  \
  template void init_branch(ParamStore<S>&, const std::string&, const ModelConfig&, Initializer&);           \
  template std::pair<Var<S>, Var<S>> head_convs(Binding<S>&, const std::string&, Var<S>, const ModelConfig&); \
  template Var<S> combine_weights(Var<S>, Var<S>, int, Index);                                               \
  template Var<S> combine_offsets(Var<S>, Var<S>, int, Index);                                               \
  template Var<S> apply_joint_filter(Var<S>, const KernelField<S>&, int);                                    \
  template KernelField<S> identity_field(Tape<S>&, Index, Index, Index, int);                                \
  template Var<S> dmsr_forward(Binding<S>&, Var<S>, Var<S>, const ModelConfig&, ForwardOptions);

DMSR_INSTANTIATE_MODEL(float)
DMSR_INSTANTIATE_MODEL(double)

}  // namespace dmsr::model
