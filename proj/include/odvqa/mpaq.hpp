#pragma once

#include "odvqa/blocks.hpp"
#include "odvqa/config.hpp"

// Motion-masked frame quality: difference maps between neighbouring pixel
// quality maps gate the centre map, then masked, refined and merged branches
// are summed into the frame quality map.

namespace odvqa {

template <typename T>
struct MotionMaps {
    Var<T> minus;  // P_t - P_prev
    Var<T> plus;   // P_next - P_t
};

template <typename T>
MotionMaps<T> motion_estimate(const Var<T>& prev, const Var<T>& cur, const Var<T>& next);

/// Intermediates of one forward pass, in evaluation order.
template <typename T>
struct MpaqTrace {
    MotionMaps<T> motion;
    Var<T> masked_minus, masked_plus;  // P_t * RSP(M)
    Var<T> fused;                      // P'_t
    Var<T> joined_minus, joined_plus;  // concat(P'_t, RSP(masked)), 2C channels
    Var<T> out;                        // F_t
};

template <typename T>
class Mpaq {
public:
    Mpaq(ParameterStore<T>& store, const ModelConfig& cfg, const std::string& prefix = "mpaq");

    /// Maps are [B, C, h, w] with identical shapes.
    MpaqTrace<T> trace(Context<T>& ctx, const Var<T>& prev, const Var<T>& cur, const Var<T>& next) const;
    Var<T> forward(Context<T>& ctx, const Var<T>& prev, const Var<T>& cur, const Var<T>& next) const {
        return trace(ctx, prev, cur, next).out;
    }

private:
    std::size_t channels_;
    RspChain<T> mask_minus_, mask_plus_, refine_minus_, refine_plus_, merge_minus_, merge_plus_;
    PointwiseConv<T> project_minus_, project_plus_;
    ChannelAttention<T> attention_;
    PointwiseConv<T> fuse_;
};

}  // namespace odvqa
