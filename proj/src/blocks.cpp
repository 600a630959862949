#include "odvqa/blocks.hpp"

namespace odvqa {

template <typename T>
ConvLayer<T>::ConvLayer(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                        std::size_t kernel_size, std::size_t stride_)
    : weight(&store.add(name + ".weight", {out, in, kernel_size, kernel_size})),
      bias(&store.add(name + ".bias", {out})),
      kernel(kernel_size),
      stride(stride_) {}

template <typename T>
Var<T> ConvLayer<T>::operator()(Context<T>& ctx, const Var<T>& x) const {
    const Shape& s = x.shape();
    if (s.size() < 3) throw ShapeError("conv: input must end in [C, H, W], got " + to_string(s));
    auto grid = sampling_grid(ctx.grid, s[s.size() - 2], s.back(), kernel, stride);
    return conv2d_sampled(x, ctx.tape.param(*weight), ctx.tape.param(*bias), std::move(grid));
}

template <typename T>
PointwiseConv<T>::PointwiseConv(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out)
    : weight(&store.add(name + ".weight", {out, in})), bias(&store.add(name + ".bias", {out})) {}

template <typename T>
Var<T> PointwiseConv<T>::operator()(Context<T>& ctx, const Var<T>& x) const {
    return conv1x1(x, ctx.tape.param(*weight), ctx.tape.param(*bias));
}

template <typename T>
Dense<T>::Dense(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out)
    : weight(&store.add(name + ".weight", {out, in})), bias(&store.add(name + ".bias", {out})) {}

template <typename T>
Var<T> Dense<T>::operator()(Context<T>& ctx, const Var<T>& x) const {
    return linear(x, ctx.tape.param(*weight), ctx.tape.param(*bias));
}

template <typename T>
BatchNorm<T>::BatchNorm(ParameterStore<T>& store, const std::string& name, std::size_t channels)
    : gamma(&store.add(name + ".gamma", {channels}, true, T(1))),
      beta(&store.add(name + ".beta", {channels})),
      running_mean(&store.add(name + ".running_mean", {channels}, false)),
      running_var(&store.add(name + ".running_var", {channels}, false, T(1))) {}

template <typename T>
Var<T> BatchNorm<T>::operator()(Context<T>& ctx, const Var<T>& x) const {
    return batch_norm(x, ctx.tape.param(*gamma), ctx.tape.param(*beta), *running_mean, *running_var, ctx.mode);
}

template <typename T>
SpatialAttention<T>::SpatialAttention(ParameterStore<T>& store, const std::string& name)
    : conv(store, name + ".conv", 2, 1, 7) {}

template <typename T>
Var<T> SpatialAttention<T>::gate(Context<T>& ctx, const Var<T>& f) const {
    const Var<T> pooled = concat<T>({reduce_max(f, 1), reduce_mean(f, 1)}, 1);
    return sigmoid(conv(ctx, pooled));
}

template <typename T>
Var<T> SpatialAttention<T>::operator()(Context<T>& ctx, const Var<T>& f) const {
    return mul(f, gate(ctx, f));
}

template <typename T>
ChannelAttention<T>::ChannelAttention(ParameterStore<T>& store, const std::string& name, std::size_t channels,
                                      std::size_t reduction) {
    if (reduction == 0 || channels % reduction != 0)
        throw std::invalid_argument("channel attention: reduction " + std::to_string(reduction) +
                                    " does not divide " + std::to_string(channels) + " channels");
    reduce = Dense<T>(store, name + ".reduce", channels, channels / reduction);
    expand = Dense<T>(store, name + ".expand", channels / reduction, channels);
}

template <typename T>
Var<T> ChannelAttention<T>::gate(Context<T>& ctx, const Var<T>& f) const {
    return sigmoid(expand(ctx, relu(reduce(ctx, global_average_pool(f, 2)))));
}

template <typename T>
Var<T> ChannelAttention<T>::operator()(Context<T>& ctx, const Var<T>& f) const {
    return mul(f, expand_channels(gate(ctx, f), f.rank()));
}

template <typename T>
ConvBnRelu<T>::ConvBnRelu(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                          std::size_t kernel, std::size_t stride)
    : conv(store, name + ".conv", in, out, kernel, stride), bn(store, name + ".bn", out) {}

template <typename T>
Var<T> ConvBnRelu<T>::operator()(Context<T>& ctx, const Var<T>& x) const {
    return relu(bn(ctx, conv(ctx, x)));
}

template <typename T>
RspBlock<T>::RspBlock(ParameterStore<T>& store, const std::string& name, std::size_t c, bool spatial_attention)
    : layer1(store, name + ".layer1", c, c, 3), layer2(store, name + ".layer2", c, c, 3), channels(c) {
    if (spatial_attention) attention.emplace(store, name + ".attention");
}

template <typename T>
Var<T> RspBlock<T>::operator()(Context<T>& ctx, const Var<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != channels)
        throw ShapeError("rsp block: expected [B, " + std::to_string(channels) + ", H, W], got " + to_string(x.shape()));
    Var<T> f = layer2(ctx, layer1(ctx, x));
    if (attention) f = (*attention)(ctx, f);
    return add(x, f);
}

template <typename T>
RspChain<T>::RspChain(ParameterStore<T>& store, const std::string& name, std::size_t channels, std::size_t n,
                      bool spatial_attention) {
    for (std::size_t i = 0; i < n; ++i)
        blocks.emplace_back(store, name + ".rsp" + std::to_string(i), channels, spatial_attention);
}

template <typename T>
Var<T> RspChain<T>::operator()(Context<T>& ctx, const Var<T>& x) const {
    Var<T> y = x;
    for (const auto& b : blocks) y = b(ctx, y);
    return y;
}

template <typename T>
Var<T> expand_channels(const Var<T>& gate, std::size_t rank) {
    Shape s = gate.shape();
    s.resize(rank, 1);
    return reshape(gate, s);
}

#define ODVQA_INSTANTIATE_BLOCKS(T)                        \
    template struct ConvLayer<T>;                          \
    template struct PointwiseConv<T>;                      \
    template struct Dense<T>;                              \
    template struct BatchNorm<T>;                          \
    template struct SpatialAttention<T>;                   \
    template struct ChannelAttention<T>;                   \
    template struct ConvBnRelu<T>;                         \
    template struct RspBlock<T>;                           \
    template struct RspChain<T>;                           \
    template Var<T> expand_channels(const Var<T>&, std::size_t);

ODVQA_INSTANTIATE_BLOCKS(float)
ODVQA_INSTANTIATE_BLOCKS(double)

}  // namespace odvqa
