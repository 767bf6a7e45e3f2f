#include "dmsr/naf.hpp"

#include "dmsr/nn.hpp"

namespace dmsr::naf {

namespace {

std::string block_name(const std::string& prefix, int block) { return prefix + ".block" + std::to_string(block); }

template <typename S>
void add_conv(ParamStore<S>& params, const std::string& name, Index out, Index in_per_group, Index kernel,
              Initializer& init) {
  params.add(name + ".weight", init.fan_in_uniform<S>({out, in_per_group, kernel, kernel}, in_per_group * kernel * kernel));
  params.add(name + ".bias", Tensor<S>::zeros({out}));
}

template <typename S>
Var<S> conv(Binding<S>& bind, const std::string& name, Var<S> x, nn::Conv2dOptions options = {}) {
  return nn::conv2d(x, bind(name + ".weight"), std::optional<Var<S>>(bind(name + ".bias")), options);
}

}  // namespace

template <typename S>
Var<S> simple_gate(Var<S> x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("simple_gate expects [B,C,H,W]");
  if (s[1] % 2 != 0) throw ShapeError("simple_gate needs an even channel count, got " + std::to_string(s[1]));
  const Index half = s[1] / 2;
  return mul(slice(x, 1, 0, half), slice(x, 1, half, half));
}

template <typename S>
Var<S> sca(Var<S> x, Var<S> weight, Var<S> bias) {
  auto pooled = nn::adaptive_avg_pool_global(x);
  auto attn = nn::conv2d(pooled, weight, std::optional<Var<S>>(bias));
  return mul(x, attn);
}

template <typename S>
void init_block(ParamStore<S>& params, const std::string& prefix, const ModelConfig& cfg, Initializer& init) {
  const Index c = cfg.embed_dim;
  params.add(prefix + ".norm1.weight", Tensor<S>::ones({c}));
  params.add(prefix + ".norm1.bias", Tensor<S>::zeros({c}));
  add_conv(params, prefix + ".conv1", 2 * c, c, 1, init);
  add_conv(params, prefix + ".conv2", 2 * c, 1, 3, init);  // depthwise
  add_conv(params, prefix + ".sca", c, c, 1, init);
  add_conv(params, prefix + ".conv3", c, c, 1, init);
  params.add(prefix + ".beta", Tensor<S>::zeros({1}));
  params.add(prefix + ".norm2.weight", Tensor<S>::ones({c}));
  params.add(prefix + ".norm2.bias", Tensor<S>::zeros({c}));
  add_conv(params, prefix + ".conv4", 2 * c, c, 1, init);
  add_conv(params, prefix + ".conv5", c, c, 1, init);
  params.add(prefix + ".gamma", Tensor<S>::zeros({1}));
}

template <typename S>
void init_backbone(ParamStore<S>& params, const std::string& prefix, const ModelConfig& cfg, Initializer& init) {
  for (int b = 0; b < cfg.blocks; ++b) init_block(params, block_name(prefix, b), cfg, init);
}

template <typename S>
Var<S> block_forward(Binding<S>& bind, const std::string& prefix, Var<S> x, const ModelConfig& cfg) {
  const Shape s = x.shape();
  if (s.size() != 4 || s[1] != cfg.embed_dim)
    throw ShapeError("NAF block expects [B," + std::to_string(cfg.embed_dim) + ",H,W], got " + to_string(s));
  const Index c = cfg.embed_dim;

  auto y = nn::layer_norm_channels(x, bind(prefix + ".norm1.weight"), bind(prefix + ".norm1.bias"));
  y = conv(bind, prefix + ".conv1", y);
  y = conv(bind, prefix + ".conv2", y, {1, 1, 2 * c});
  y = simple_gate(y);
  y = sca(y, bind(prefix + ".sca.weight"), bind(prefix + ".sca.bias"));
  y = conv(bind, prefix + ".conv3", y);
  x = add(x, mul(y, bind(prefix + ".beta")));

  auto z = nn::layer_norm_channels(x, bind(prefix + ".norm2.weight"), bind(prefix + ".norm2.bias"));
  z = conv(bind, prefix + ".conv4", z);
  z = simple_gate(z);
  z = conv(bind, prefix + ".conv5", z);
  return add(x, mul(z, bind(prefix + ".gamma")));
}

template <typename S>
Var<S> backbone_forward(Binding<S>& bind, const std::string& prefix, Var<S> x, const ModelConfig& cfg) {
  for (int b = 0; b < cfg.blocks; ++b) {
    ScopeGuard<S> scope(bind.tape(), kBlockScope);
    x = block_forward(bind, block_name(prefix, b), x, cfg);
  }
  return x;
}

#define DMSR_INSTANTIATE_NAF(S)                                                                       \
  template Var<S> simple_gate(Var<S>);                                                                \
  template Var<S> sca(Var<S>, Var<S>, Var<S>);                                                        \
  template void init_block(ParamStore<S>&, const std::string&, const ModelConfig&, Initializer&);     \
  template void init_backbone(ParamStore<S>&, const std::string&, const ModelConfig&, Initializer&);  \
  template Var<S> block_forward(Binding<S>&, const std::string&, Var<S>, const ModelConfig&);         \
  template Var<S> backbone_forward(Binding<S>&, const std::string&, Var<S>, const ModelConfig&);

DMSR_INSTANTIATE_NAF(float)
DMSR_INSTANTIATE_NAF(double)

}  // namespace dmsr::naf
