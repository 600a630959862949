#include "odvqa/mpaq.hpp"

namespace odvqa {

template <typename T>
MotionMaps<T> motion_estimate(const Var<T>& prev, const Var<T>& cur, const Var<T>& next) {
    if (prev.shape() != cur.shape() || next.shape() != cur.shape())
        throw ShapeError("motion: map extents differ: " + to_string(prev.shape()) + ", " + to_string(cur.shape()) +
                         ", " + to_string(next.shape()));
    return {sub(cur, prev), sub(next, cur)};
}

template <typename T>
Mpaq<T>::Mpaq(ParameterStore<T>& store, const ModelConfig& cfg, const std::string& prefix) : channels_(cfg.channels) {
    cfg.validate();
    const std::size_t c = cfg.channels, n = cfg.mpaq_blocks;
    const bool sa = cfg.spatial_attention;
    mask_minus_ = RspChain<T>(store, prefix + ".mask_minus", c, n, sa);
    mask_plus_ = RspChain<T>(store, prefix + ".mask_plus", c, n, sa);
    refine_minus_ = RspChain<T>(store, prefix + ".refine_minus", c, n, sa);
    refine_plus_ = RspChain<T>(store, prefix + ".refine_plus", c, n, sa);
    merge_minus_ = RspChain<T>(store, prefix + ".merge_minus", 2 * c, n, sa);
    merge_plus_ = RspChain<T>(store, prefix + ".merge_plus", 2 * c, n, sa);
    project_minus_ = PointwiseConv<T>(store, prefix + ".merge_minus.project", 2 * c, c);
    project_plus_ = PointwiseConv<T>(store, prefix + ".merge_plus.project", 2 * c, c);
    attention_ = ChannelAttention<T>(store, prefix + ".attention", 3 * c, cfg.reduction);
    fuse_ = PointwiseConv<T>(store, prefix + ".fuse", 3 * c, c);
}

template <typename T>
MpaqTrace<T> Mpaq<T>::trace(Context<T>& ctx, const Var<T>& prev, const Var<T>& cur, const Var<T>& next) const {
    if (cur.rank() != 4 || cur.dim(1) != channels_)
        throw ShapeError("mpaq: expected [B, " + std::to_string(channels_) + ", h, w], got " + to_string(cur.shape()));
    MpaqTrace<T> tr;
    tr.motion = motion_estimate(prev, cur, next);
    tr.masked_minus = mul(cur, mask_minus_(ctx, tr.motion.minus));
    tr.masked_plus = mul(cur, mask_plus_(ctx, tr.motion.plus));
    tr.fused = fuse_(ctx, attention_(ctx, concat<T>({tr.masked_minus, cur, tr.masked_plus}, 1)));
    tr.joined_minus = concat<T>({tr.fused, refine_minus_(ctx, tr.masked_minus)}, 1);
    tr.joined_plus = concat<T>({tr.fused, refine_plus_(ctx, tr.masked_plus)}, 1);
    tr.out = add(add(tr.fused, project_minus_(ctx, merge_minus_(ctx, tr.joined_minus))),
                 project_plus_(ctx, merge_plus_(ctx, tr.joined_plus)));
    return tr;
}

template MotionMaps<float> motion_estimate(const Var<float>&, const Var<float>&, const Var<float>&);
template MotionMaps<double> motion_estimate(const Var<double>&, const Var<double>&, const Var<double>&);
template class Mpaq<float>;
template class Mpaq<double>;

}  // namespace odvqa
