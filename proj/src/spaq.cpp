#include "odvqa/spaq.hpp"

namespace odvqa {

template <typename T>
Spaq<T>::Spaq(ParameterStore<T>& store, const ModelConfig& cfg, const std::string& prefix)
    : cfg_(cfg), stem_(store, prefix + ".stem", 3, cfg.channels, 3) {
    cfg_.validate();
    const std::size_t c = cfg.channels;
    static const char* level_names[3] = {"ll", "ml", "hl"};
    for (std::size_t l = 0; l < 3; ++l) {
        const std::string name = prefix + ".level" + std::to_string(l + 1);
        AsfeStage<T>& s = stages_[l];
        s.entry = ConvBnRelu<T>(store, name + ".entry", c, c, 3, 2);
        s.blocks = RspChain<T>(store, name, c, cfg.stage_blocks[l], cfg.spatial_attention);
        if (cfg.long_skip) s.skip.emplace(store, name + ".skip", c, c);
    }
    for (std::size_t l = 0; l < 3; ++l)
        rescale_[l] = PointwiseConv<T>(store, prefix + ".mlfr." + level_names[l], c, c);
    switch (cfg.sfi_mode) {
        case SfiMode::selective:
            reduce_ = Dense<T>(store, prefix + ".sfi.reduce", c, c / cfg.reduction);
            for (std::size_t l = 0; l < 3; ++l)
                expand_[l] = Dense<T>(store, prefix + ".sfi.expand_" + level_names[l], c / cfg.reduction, c);
            break;
        case SfiMode::sum: break;
        case SfiMode::sum_ca: attention_.emplace(store, prefix + ".sfi.attention", c, cfg.reduction); break;
        case SfiMode::concat: fuse_.emplace(store, prefix + ".sfi.fuse", 3 * c, c); break;
        case SfiMode::concat_ca:
            attention_.emplace(store, prefix + ".sfi.attention", 3 * c, cfg.reduction);
            fuse_.emplace(store, prefix + ".sfi.fuse", 3 * c, c);
            break;
    }
}

template <typename T>
MultiLevelFeatures<T> Spaq<T>::extract(Context<T>& ctx, const Var<T>& frames) const {
    const Shape& s = frames.shape();
    if (s.size() != 4 || s[1] != 3)
        throw ShapeError("spaq: frames must be [B, 3, H, W], got " + to_string(s));
    if (s[2] % 8 != 0 || s[3] % 8 != 0)
        throw ShapeError("spaq: frame extents " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                         " must be divisible by 8");
    Var<T> x = stem_(ctx, frames);
    std::array<Var<T>, 3> out;
    for (std::size_t l = 0; l < 3; ++l) {
        const AsfeStage<T>& st = stages_[l];
        Var<T> y = st.blocks(ctx, st.entry(ctx, x));
        if (st.skip) y = add(y, (*st.skip)(ctx, resize(x, Resize::down2)));
        out[l] = y;
        x = y;
    }
    return {out[0], out[1], out[2]};
}

template <typename T>
std::array<Var<T>, 3> Spaq<T>::rescale(Context<T>& ctx, const MultiLevelFeatures<T>& m) const {
    return {rescale_[0](ctx, resize(m.ll, Resize::down2)), rescale_[1](ctx, m.ml),
            rescale_[2](ctx, resize(m.hl, Resize::up2))};
}

template <typename T>
SfiResult<T> Spaq<T>::integrate(Context<T>& ctx, const std::array<Var<T>, 3>& lv) const {
    for (std::size_t l = 1; l < 3; ++l)
        if (lv[l].shape() != lv[0].shape())
            throw ShapeError("sfi: level extents differ: " + to_string(lv[0].shape()) + " vs " + to_string(lv[l].shape()));
    switch (cfg_.sfi_mode) {
        case SfiMode::selective: {
            SfiState<T> st;
            st.summed = add(add(lv[0], lv[1]), lv[2]);
            st.pooled = global_average_pool(st.summed, 2);
            st.reduced = reduce_(ctx, st.pooled);
            const std::size_t b = st.pooled.dim(0), c = st.pooled.dim(1);
            std::vector<Var<T>> a;
            for (std::size_t l = 0; l < 3; ++l) a.push_back(reshape(expand_[l](ctx, st.reduced), {b, 1, c}));
            st.logits = concat(a, 1);
            st.weights = softmax(st.logits, 1);
            Var<T> p;
            for (std::size_t l = 0; l < 3; ++l) {
                const Var<T> w = reshape(slice(st.weights, 1, l, l + 1), {b, c, 1, 1});
                const Var<T> term = mul(lv[l], w);
                p = l == 0 ? term : add(p, term);
            }
            return {p, st};
        }
        case SfiMode::sum: return {add(add(lv[0], lv[1]), lv[2]), std::nullopt};
        case SfiMode::sum_ca: return {(*attention_)(ctx, add(add(lv[0], lv[1]), lv[2])), std::nullopt};
        case SfiMode::concat: return {(*fuse_)(ctx, concat<T>({lv[0], lv[1], lv[2]}, 1)), std::nullopt};
        case SfiMode::concat_ca:
            return {(*fuse_)(ctx, (*attention_)(ctx, concat<T>({lv[0], lv[1], lv[2]}, 1))), std::nullopt};
    }
    throw std::logic_error("sfi: unknown mode");
}

template <typename T>
Var<T> Spaq<T>::forward(Context<T>& ctx, const Var<T>& frames) const {
    return integrate(ctx, rescale(ctx, extract(ctx, frames))).p;
}

template class Spaq<float>;
template class Spaq<double>;

}  // namespace odvqa
