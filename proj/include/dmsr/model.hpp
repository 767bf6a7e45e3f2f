#pragma once

#include "dmsr/config.hpp"
#include "dmsr/params.hpp"

#include <cstdint>
#include <string>
#include <utility>

namespace dmsr::model {

/// Per-pixel filter taps at full resolution.
///   weights: [B, k*k, H, W], summing to 1 over the tap axis
///   offsets: [B, 2*k*k, H, W], (dy, dx) pixel displacement per tap
template <typename S>
struct KernelField {
  Var<S> weights;
  Var<S> offsets;
};

/// Scope names of the two feature branches.
inline constexpr const char* kGuidanceBranch = "guidance";
inline constexpr const char* kTargetBranch = "target";

/// Input channels of a branch after space-to-depth resampling.
int branch_in_channels(const ModelConfig& cfg, const std::string& branch);

/// Fresh parameters for both branches. Deterministic in `seed`.
template <typename S>
ParamStore<S> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Stem, backbone and heads of one branch.
template <typename S>
void init_branch(ParamStore<S>& params, const std::string& branch, const ModelConfig& cfg, Initializer& init);

/// Two 3x3 convolutions per path (GELU between) producing the raw weight map
/// [B, 16*k*k, h, w] and offset map [B, 32*k*k, h, w] at resampled resolution.
template <typename S>
std::pair<Var<S>, Var<S>> head_convs(Binding<S>& bind, const std::string& branch, Var<S> features,
                                     const ModelConfig& cfg);

/// sigmoid(guide) * sigmoid(target), stitched back to full resolution, then
/// re-centred per pixel so the k*k taps sum to exactly 1.
template <typename S>
Var<S> combine_weights(Var<S> w_guide, Var<S> w_target, int k, Index resample_factor = 4);

/// guide * target, stitched to full resolution. No normalisation.
template <typename S>
Var<S> combine_offsets(Var<S> o_guide, Var<S> o_target, int k, Index resample_factor = 4);

/// out(p) = sum_t W_t(p) * target(p + base_t + offset_t(p)) over the k x k
/// grid centred at p; fractional positions are read bilinearly with border
/// clamping. target_up: [B,1,H,W].
template <typename S>
Var<S> apply_joint_filter(Var<S> target_up, const KernelField<S>& field, int k);

/// One-hot centre tap, zero offsets.
template <typename S>
KernelField<S> identity_field(Tape<S>& tape, Index batch, Index height, Index width, int k);

struct ForwardOptions {
  bool identity_head = false;  // bypass both branches with the delta kernel
};

/// guidance_rgb: [B,3,H,W], depth_lr: [B,1,H/scale,W/scale] -> SR depth [B,1,H,W].
template <typename S>
Var<S> dmsr_forward(Binding<S>& bind, Var<S> guidance_rgb, Var<S> depth_lr, const ModelConfig& cfg,
                    ForwardOptions options = {});

}  // namespace dmsr::model
