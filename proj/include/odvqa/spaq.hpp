#pragma once

#include <array>

#include "odvqa/blocks.hpp"
#include "odvqa/config.hpp"

// Spatial quality sub-network: feature extraction over three levels (ASFE),
// re-scaling to the middle level (MLFR), and selective integration (SFI).

namespace odvqa {

template <typename T>
struct MultiLevelFeatures {
    Var<T> ll;  // [B, C, H/2, W/2]
    Var<T> ml;  // [B, C, H/4, W/4]
    Var<T> hl;  // [B, C, H/8, W/8]
};

/// Intermediates of the selective integration, kept for inspection.
template <typename T>
struct SfiState {
    Var<T> summed;    // U = I'_LL + I'_ML + I'_HL
    Var<T> pooled;    // g, [B, C]
    Var<T> reduced;   // g', [B, C/r]
    Var<T> logits;    // a, [B, 3, C] in LL, ML, HL order
    Var<T> weights;   // softmax of a over the branch axis
};

template <typename T>
struct SfiResult {
    Var<T> p;                         // [B, C, H/4, W/4]
    std::optional<SfiState<T>> state; // only for the selective mode
};

template <typename T>
struct AsfeStage {
    ConvBnRelu<T> entry;  // stride 2
    RspChain<T> blocks;
    std::optional<PointwiseConv<T>> skip;
};

template <typename T>
class Spaq {
public:
    Spaq(ParameterStore<T>& store, const ModelConfig& cfg, const std::string& prefix = "spaq");

    /// frames [B, 3, H, W] with H, W divisible by 8.
    MultiLevelFeatures<T> extract(Context<T>& ctx, const Var<T>& frames) const;
    std::array<Var<T>, 3> rescale(Context<T>& ctx, const MultiLevelFeatures<T>& m) const;
    SfiResult<T> integrate(Context<T>& ctx, const std::array<Var<T>, 3>& levels) const;
    Var<T> forward(Context<T>& ctx, const Var<T>& frames) const;

    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    ConvBnRelu<T> stem_;
    std::array<AsfeStage<T>, 3> stages_;
    std::array<PointwiseConv<T>, 3> rescale_;
    // selective
    Dense<T> reduce_;
    std::array<Dense<T>, 3> expand_;
    // ablation variants
    std::optional<ChannelAttention<T>> attention_;
    std::optional<PointwiseConv<T>> fuse_;
};

}  // namespace odvqa
