#pragma once

#include "dmsr/config.hpp"
#include "dmsr/params.hpp"

#include <string>

namespace dmsr::swin {

/// Tape scope entered once per residual swin transformer block.
inline constexpr const char* kBlockScope = "rstb";

template <typename S>
void init_stl(ParamStore<S>& params, const std::string& prefix, const ModelConfig& cfg, Initializer& init);

template <typename S>
void init_backbone(ParamStore<S>& params, const std::string& prefix, const ModelConfig& cfg, Initializer& init);

/// Zeroes the attention/MLP output projections of every STL and the trailing
/// convolution of every RSTB, which turns the backbone into the identity map.
template <typename S>
void zero_residual_branches(ParamStore<S>& params, const std::string& prefix, const ModelConfig& cfg);

/// Shift used by layer `layer` of an RSTB on an h x w map: 0 for even layers,
/// window/2 for odd ones, 0 when a single window covers the map.
int stl_shift(const ModelConfig& cfg, int layer, Index height, Index width);

/// Swin transformer layer on x: [B,H,W,C]:
///   x + W-MSA(LN(x)), then + MLP(LN(.)).
/// A non-zero `shift` rolls the map before windowing and masks attention
/// across the wrap-around seam.
template <typename S>
Var<S> stl_forward(Binding<S>& bind, const std::string& prefix, Var<S> x, const ModelConfig& cfg, Index shift);

/// Residual swin transformer block on x: [B,C,H,W].
template <typename S>
Var<S> rstb_forward(Binding<S>& bind, const std::string& prefix, Var<S> x, const ModelConfig& cfg);

/// cfg.blocks RSTBs in series on x: [B,embed_dim,H,W]; extents are preserved.
template <typename S>
Var<S> backbone_forward(Binding<S>& bind, const std::string& prefix, Var<S> x, const ModelConfig& cfg);

}  // namespace dmsr::swin
