#pragma once

#include <optional>
#include <string>
#include <vector>

#include "odvqa/ops.hpp"

// Reusable network blocks. Each block registers its parameters in a store at
// construction and is then applied to tensors laid out as [B, C, H, W].

namespace odvqa {

/// Per-forward settings shared by every block.
template <typename T>
struct Context {
    Tape<T>& tape;
    BnMode mode = BnMode::train;
    GridKind grid = GridKind::spherical;
};

/// Convolution on the sampling grid selected by the context (spherical or regular).
template <typename T>
struct ConvLayer {
    Parameter<T>* weight = nullptr;  // [out, in, k, k]
    Parameter<T>* bias = nullptr;    // [out]
    std::size_t kernel = 3;
    std::size_t stride = 1;

    ConvLayer() = default;
    ConvLayer(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
              std::size_t stride = 1);
    Var<T> operator()(Context<T>& ctx, const Var<T>& x) const;
};

/// 1x1 convolution over channels of [B, C, ...].
template <typename T>
struct PointwiseConv {
    Parameter<T>* weight = nullptr;  // [out, in]
    Parameter<T>* bias = nullptr;

    PointwiseConv() = default;
    PointwiseConv(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out);
    Var<T> operator()(Context<T>& ctx, const Var<T>& x) const;
};

/// Fully connected over the last axis.
template <typename T>
struct Dense {
    Parameter<T>* weight = nullptr;  // [out, in]
    Parameter<T>* bias = nullptr;

    Dense() = default;
    Dense(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out);
    Var<T> operator()(Context<T>& ctx, const Var<T>& x) const;
};

template <typename T>
struct BatchNorm {
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;
    Parameter<T>* running_mean = nullptr;
    Parameter<T>* running_var = nullptr;

    BatchNorm() = default;
    BatchNorm(ParameterStore<T>& store, const std::string& name, std::size_t channels);
    Var<T> operator()(Context<T>& ctx, const Var<T>& x) const;
};

/// f * sigmoid(conv7(concat(max_c f, mean_c f))).
template <typename T>
struct SpatialAttention {
    ConvLayer<T> conv;

    SpatialAttention() = default;
    SpatialAttention(ParameterStore<T>& store, const std::string& name);
    Var<T> gate(Context<T>& ctx, const Var<T>& f) const;  // [B, 1, H, W]
    Var<T> operator()(Context<T>& ctx, const Var<T>& f) const;
};

/// Squeeze-excitation gate: f * sigmoid(expand(relu(reduce(gap f)))).
template <typename T>
struct ChannelAttention {
    Dense<T> reduce, expand;

    ChannelAttention() = default;
    ChannelAttention(ParameterStore<T>& store, const std::string& name, std::size_t channels, std::size_t reduction);
    Var<T> gate(Context<T>& ctx, const Var<T>& f) const;  // [B, C]
    Var<T> operator()(Context<T>& ctx, const Var<T>& f) const;
};

/// Conv, batch norm, ReLU.
template <typename T>
struct ConvBnRelu {
    ConvLayer<T> conv;
    BatchNorm<T> bn;

    ConvBnRelu() = default;
    ConvBnRelu(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
               std::size_t stride = 1);
    Var<T> operator()(Context<T>& ctx, const Var<T>& x) const;
};

/// y = x + SA(F(x)), F = two conv-BN-ReLU layers. Without attention, y = x + F(x).
template <typename T>
struct RspBlock {
    ConvBnRelu<T> layer1, layer2;
    std::optional<SpatialAttention<T>> attention;
    std::size_t channels = 0;

    RspBlock() = default;
    RspBlock(ParameterStore<T>& store, const std::string& name, std::size_t channels, bool spatial_attention = true);
    Var<T> operator()(Context<T>& ctx, const Var<T>& x) const;
};

/// n chained RSP blocks.
template <typename T>
struct RspChain {
    std::vector<RspBlock<T>> blocks;

    RspChain() = default;
    RspChain(ParameterStore<T>& store, const std::string& name, std::size_t channels, std::size_t n,
             bool spatial_attention = true);
    Var<T> operator()(Context<T>& ctx, const Var<T>& x) const;
};

/// Broadcastable view of a [B, C] gate for a [B, C, ...] tensor.
template <typename T>
Var<T> expand_channels(const Var<T>& gate, std::size_t rank);

}  // namespace odvqa
