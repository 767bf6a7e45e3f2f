#pragma once

#include "dmsr/config.hpp"
#include "dmsr/params.hpp"

#include <string>

namespace dmsr::naf {

/// Tape scope entered once per NAF block.
inline constexpr const char* kBlockScope = "naf_block";

/// Splits x: [B,C,H,W] into its first and second C/2 channels y, z and
/// returns y * z.
template <typename S>
Var<S> simple_gate(Var<S> x);

/// Simplified channel attention: x * conv1x1(global_avg_pool(x)).
template <typename S>
Var<S> sca(Var<S> x, Var<S> weight, Var<S> bias);

template <typename S>
void init_block(ParamStore<S>& params, const std::string& prefix, const ModelConfig& cfg, Initializer& init);

template <typename S>
void init_backbone(ParamStore<S>& params, const std::string& prefix, const ModelConfig& cfg, Initializer& init);

// Block layout, on C channels:
//   LN -> 1x1 (C->2C) -> depthwise 3x3 -> SimpleGate -> SCA -> 1x1 -> *beta, residual
//   LN -> 1x1 (C->2C) -> SimpleGate -> 1x1 -> *gamma, residual
template <typename S>
Var<S> block_forward(Binding<S>& bind, const std::string& prefix, Var<S> x, const ModelConfig& cfg);

/// cfg.blocks NAF blocks in series on x: [B,embed_dim,H,W].
template <typename S>
Var<S> backbone_forward(Binding<S>& bind, const std::string& prefix, Var<S> x, const ModelConfig& cfg);

}  // namespace dmsr::naf
