#include "dmsr/swin.hpp"

#include "dmsr/nn.hpp"

namespace dmsr::swin {

namespace {

std::string stl_name(const std::string& rstb, int layer) { return rstb + ".stl" + std::to_string(layer); }
std::string rstb_name(const std::string& prefix, int block) { return prefix + ".rstb" + std::to_string(block); }

template <typename S>
void zero(ParamStore<S>& params, const std::string& name) {
  auto& t = params.at(name);
  t.array().setZero();
}

}  // namespace

template <typename S>
void init_stl(ParamStore<S>& params, const std::string& prefix, const ModelConfig& cfg, Initializer& init) {
  const Index c = cfg.embed_dim;
  const Index hidden = c * cfg.mlp_ratio;
  params.add(prefix + ".norm1.weight", Tensor<S>::ones({c}));
  params.add(prefix + ".norm1.bias", Tensor<S>::zeros({c}));
  params.add(prefix + ".attn.qkv.weight", init.normal<S>({c, 3 * c}, 0.02));
  params.add(prefix + ".attn.qkv.bias", Tensor<S>::zeros({3 * c}));
  params.add(prefix + ".attn.proj.weight", init.normal<S>({c, c}, 0.02));
  params.add(prefix + ".attn.proj.bias", Tensor<S>::zeros({c}));
  if (cfg.relative_position_bias) {
    const Index span = 2 * cfg.window - 1;
    params.add(prefix + ".attn.relative_bias", init.normal<S>({span * span, cfg.heads}, 0.02));
  }
  params.add(prefix + ".norm2.weight", Tensor<S>::ones({c}));
  params.add(prefix + ".norm2.bias", Tensor<S>::zeros({c}));
  params.add(prefix + ".mlp.fc1.weight", init.normal<S>({c, hidden}, 0.02));
  params.add(prefix + ".mlp.fc1.bias", Tensor<S>::zeros({hidden}));
  params.add(prefix + ".mlp.fc2.weight", init.normal<S>({hidden, c}, 0.02));
  params.add(prefix + ".mlp.fc2.bias", Tensor<S>::zeros({c}));
}

template <typename S>
void init_backbone(ParamStore<S>& params, const std::string& prefix, const ModelConfig& cfg, Initializer& init) {
  const Index c = cfg.embed_dim;
  for (int b = 0; b < cfg.blocks; ++b) {
    const auto rstb = rstb_name(prefix, b);
    for (int l = 0; l < cfg.stls_per_block; ++l) init_stl(params, stl_name(rstb, l), cfg, init);
    params.add(rstb + ".conv.weight", init.fan_in_uniform<S>({c, c, 3, 3}, c * 9));
    params.add(rstb + ".conv.bias", Tensor<S>::zeros({c}));
  }
}

template <typename S>
void zero_residual_branches(ParamStore<S>& params, const std::string& prefix, const ModelConfig& cfg) {
  for (int b = 0; b < cfg.blocks; ++b) {
    const auto rstb = rstb_name(prefix, b);
    for (int l = 0; l < cfg.stls_per_block; ++l) {
      const auto stl = stl_name(rstb, l);
      zero(params, stl + ".attn.proj.weight");
      zero(params, stl + ".attn.proj.bias");
      zero(params, stl + ".mlp.fc2.weight");
      zero(params, stl + ".mlp.fc2.bias");
    }
    zero(params, rstb + ".conv.weight");
    zero(params, rstb + ".conv.bias");
  }
}

int stl_shift(const ModelConfig& cfg, int layer, Index height, Index width) {
  if (layer % 2 == 0) return 0;
  if (height <= cfg.window && width <= cfg.window) return 0;
  return cfg.window / 2;
}

template <typename S>
Var<S> stl_forward(Binding<S>& bind, const std::string& prefix, Var<S> x, const ModelConfig& cfg, Index shift) {
  const Shape s = x.shape();
  if (s.size() != 4 || s[3] != cfg.embed_dim)
    throw ShapeError("stl_forward expects [B,H,W," + std::to_string(cfg.embed_dim) + "], got " + to_string(s));
  const Index batch = s[0], h = s[1], w = s[2];
  const Index win = cfg.window;
  if (h % win != 0 || w % win != 0)
    throw ShapeError("window " + std::to_string(win) + " does not divide " + to_string(s));

  auto& tape = bind.tape();
  nn::AttentionParams<S> attn{bind(prefix + ".attn.qkv.weight"), bind(prefix + ".attn.qkv.bias"),
                              bind(prefix + ".attn.proj.weight"), bind(prefix + ".attn.proj.bias"),
                              cfg.heads, std::nullopt, win};
  if (cfg.relative_position_bias) attn.relative_bias_table = bind(prefix + ".attn.relative_bias");

  auto hcur = nn::layer_norm(x, bind(prefix + ".norm1.weight"), bind(prefix + ".norm1.bias"));
  std::optional<Var<S>> mask;
  if (shift != 0) {
    hcur = nn::cyclic_shift(hcur, -shift, -shift);
    mask = tape.constant(nn::shifted_window_mask<S>(h, w, win, shift));
  }
  auto windows = nn::window_partition(hcur, win);
  windows = nn::multi_head_attention(windows, attn, mask);
  hcur = nn::window_merge(windows, batch, h, w, win);
  if (shift != 0) hcur = nn::cyclic_shift(hcur, shift, shift);
  x = add(x, hcur);

  auto m = nn::layer_norm(x, bind(prefix + ".norm2.weight"), bind(prefix + ".norm2.bias"));
  m = nn::linear(m, bind(prefix + ".mlp.fc1.weight"), std::optional<Var<S>>(bind(prefix + ".mlp.fc1.bias")));
  m = gelu(m, GeluMode::exact);
  m = nn::linear(m, bind(prefix + ".mlp.fc2.weight"), std::optional<Var<S>>(bind(prefix + ".mlp.fc2.bias")));
  return add(x, m);
}

template <typename S>
Var<S> rstb_forward(Binding<S>& bind, const std::string& prefix, Var<S> x, const ModelConfig& cfg) {
  const Shape s = x.shape();
  if (s.size() != 4) throw ShapeError("rstb_forward expects [B,C,H,W]");
  auto tokens = permute(x, {0, 2, 3, 1});
  for (int l = 0; l < cfg.stls_per_block; ++l)
    tokens = stl_forward(bind, stl_name(prefix, l), tokens, cfg, stl_shift(cfg, l, s[2], s[3]));
  auto y = permute(tokens, {0, 3, 1, 2});
  y = nn::conv2d(y, bind(prefix + ".conv.weight"), std::optional<Var<S>>(bind(prefix + ".conv.bias")), {1, 1, 1});
  return add(x, y);
}

template <typename S>
Var<S> backbone_forward(Binding<S>& bind, const std::string& prefix, Var<S> x, const ModelConfig& cfg) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != cfg.embed_dim)
    throw ShapeError("swin backbone expects [B," + std::to_string(cfg.embed_dim) + ",H,W], got " + to_string(s));
  if (s[2] % cfg.window != 0 || s[3] % cfg.window != 0)
    throw ConfigError("window " + std::to_string(cfg.window) + " does not divide feature extents " + to_string(s));
  for (int b = 0; b < cfg.blocks; ++b) {
    ScopeGuard<S> scope(bind.tape(), kBlockScope);
    x = rstb_forward(bind, rstb_name(prefix, b), x, cfg);
  }
  return x;
}

#define DMSR_INSTANTIATE_SWIN(S)                                                                        \
  template void init_stl(ParamStore<S>&, const std::string&, const ModelConfig&, Initializer&);         \
  template void init_backbone(ParamStore<S>&, const std::string&, const ModelConfig&, Initializer&);    \
  template void zero_residual_branches(ParamStore<S>&, const std::string&, const ModelConfig&);         \
  template Var<S> stl_forward(Binding<S>&, const std::string&, Var<S>, const ModelConfig&, Index);      \
  template Var<S> rstb_forward(Binding<S>&, const std::string&, Var<S>, const ModelConfig&);            \
  template Var<S> backbone_forward(Binding<S>&, const std::string&, Var<S>, const ModelConfig&);

DMSR_INSTANTIATE_SWIN(float)
DMSR_INSTANTIATE_SWIN(double)

}  // namespace dmsr::swin
