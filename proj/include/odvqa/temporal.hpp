#pragma once

#include "odvqa/blocks.hpp"
#include "odvqa/config.hpp"

// Temporal non-local re-weighting of the clip tubelet and the regression head.
// Tubelets are laid out [B, S, h, w, C].

namespace odvqa {

template <typename T>
struct AttentionEmbeddings {
    Var<T> query;       // [B*h*w, S, C0]
    Var<T> key;         // [B*h*w, C0, S]
    Var<T> value;       // [B*h*w, C0, S]
    Var<T> similarity;  // X, [B*h*w, S, S]
};

template <typename T>
struct MftnResult {
    Var<T> out;  // V'
    std::optional<AttentionEmbeddings<T>> embeddings;
};

template <typename T>
class Mftn {
public:
    Mftn(ParameterStore<T>& store, const ModelConfig& cfg, const std::string& prefix = "mftn");

    MftnResult<T> forward(Context<T>& ctx, const Var<T>& tubelet) const;

private:
    MftnMode mode_;
    bool normalize_;
    std::size_t channels_, embed_;
    Dense<T> query_, key_, value_, restore_;
};

template <typename T>
class Aqr {
public:
    Aqr(ParameterStore<T>& store, std::size_t channels, const std::string& prefix = "aqr");

    /// Tubelet [B, S, h, w, C] with h, w >= 4 -> scores [B].
    Var<T> forward(Context<T>& ctx, const Var<T>& tubelet) const;

private:
    std::size_t channels_;
    Parameter<T>* conv1_w_;
    Parameter<T>* conv1_b_;
    Parameter<T>* conv2_w_;
    Parameter<T>* conv2_b_;
    Dense<T> fc1_, fc2_;
};

/// Sum of 3D max and average pooling with window 2 and stride 2 on each of
/// (S, h, w); an axis shorter than 2 pools with window 1.
template <typename T>
Var<T> complementary_pool(const Var<T>& x);

}  // namespace odvqa
