#include "odvqa/temporal.hpp"

#include <algorithm>

namespace odvqa {

template <typename T>
Mftn<T>::Mftn(ParameterStore<T>& store, const ModelConfig& cfg, const std::string& prefix)
    : mode_(cfg.mftn_mode),
      normalize_(cfg.normalize_similarity),
      channels_(cfg.channels),
      embed_(cfg.effective_embed_channels()) {
    if (embed_ > channels_ || embed_ == 0)
        throw std::invalid_argument("mftn: embedded channels " + std::to_string(embed_) + " must lie in [1, " +
                                    std::to_string(channels_) + "]");
    if (mode_ == MftnMode::off) return;
    query_ = Dense<T>(store, prefix + ".query", channels_, embed_);
    key_ = Dense<T>(store, prefix + ".key", channels_, embed_);
    value_ = Dense<T>(store, prefix + ".value", channels_, embed_);
    restore_ = Dense<T>(store, prefix + ".restore", embed_, channels_);
}

template <typename T>
MftnResult<T> Mftn<T>::forward(Context<T>& ctx, const Var<T>& v) const {
    const Shape& s = v.shape();
    if (s.size() != 5 || s[4] != channels_)
        throw ShapeError("mftn: tubelet must be [B, S, h, w, " + std::to_string(channels_) + "], got " + to_string(s));
    if (mode_ == MftnMode::off) return {v, std::nullopt};
    const std::size_t b = s[0], n = s[1], h = s[2], w = s[3], c0 = embed_;
    const std::size_t loc = b * h * w;
    AttentionEmbeddings<T> e;
    // [B, S, h, w, C0] -> [B, h, w, S, C0] or [B, h, w, C0, S]
    e.query = reshape(permute(query_(ctx, v), {0, 2, 3, 1, 4}), {loc, n, c0});
    e.key = reshape(permute(key_(ctx, v), {0, 2, 3, 4, 1}), {loc, c0, n});
    e.value = reshape(permute(value_(ctx, v), {0, 2, 3, 4, 1}), {loc, c0, n});
    e.similarity = matmul_batched(e.query, e.key);
    const Var<T> x = normalize_ ? softmax(e.similarity, 2) : e.similarity;
    const Var<T> y = matmul_batched(e.value, x);  // [loc, C0, S]
    const Var<T> restored = permute(reshape(y, {b, h, w, c0, n}), {0, 4, 1, 2, 3});
    return {add(v, restore_(ctx, restored)), e};
}

template <typename T>
Var<T> complementary_pool(const Var<T>& x) {
    const Shape& s = x.shape();
    if (s.size() < 3) throw ShapeError("pool: expected trailing (S, h, w), got " + to_string(s));
    std::array<std::size_t, 3> win{};
    for (std::size_t i = 0; i < 3; ++i) win[i] = std::min<std::size_t>(2, s[s.size() - 3 + i]);
    const std::array<std::size_t, 3> stride{2, 2, 2};
    return add(pool3d(x, win, stride, PoolKind::max), pool3d(x, win, stride, PoolKind::avg));
}

template <typename T>
Aqr<T>::Aqr(ParameterStore<T>& store, std::size_t channels, const std::string& prefix)
    : channels_(channels),
      conv1_w_(&store.add(prefix + ".conv1.weight", {16, channels, 3, 3, 3})),
      conv1_b_(&store.add(prefix + ".conv1.bias", {16})),
      conv2_w_(&store.add(prefix + ".conv2.weight", {8, 16, 3, 3, 3})),
      conv2_b_(&store.add(prefix + ".conv2.bias", {8})),
      fc1_(store, prefix + ".fc1", 8, 20),
      fc2_(store, prefix + ".fc2", 20, 1) {}

template <typename T>
Var<T> Aqr<T>::forward(Context<T>& ctx, const Var<T>& v) const {
    const Shape& s = v.shape();
    if (s.size() != 5 || s[4] != channels_)
        throw ShapeError("aqr: tubelet must be [B, S, h, w, " + std::to_string(channels_) + "], got " + to_string(s));
    if (s[2] < 4 || s[3] < 4)
        throw ShapeError("aqr: tubelet spatial extents " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                         " are too small for two pooling stages (need at least 4x4)");
    Tape<T>& tp = ctx.tape;
    Var<T> x = permute(v, {0, 4, 1, 2, 3});  // [B, C, S, h, w]
    x = complementary_pool(conv3d(x, tp.param(*conv1_w_), tp.param(*conv1_b_)));
    x = complementary_pool(conv3d(x, tp.param(*conv2_w_), tp.param(*conv2_b_)));
    x = global_average_pool(x, 2);  // [B, 8]
    x = fc2_(ctx, relu(fc1_(ctx, x)));
    return reshape(x, {s[0]});
}

template class Mftn<float>;
template class Mftn<double>;
template class Aqr<float>;
template class Aqr<double>;
template Var<float> complementary_pool(const Var<float>&);
template Var<double> complementary_pool(const Var<double>&);

}  // namespace odvqa
