#pragma once

#include <cstdint>
#include <memory>

#include "odvqa/mpaq.hpp"
#include "odvqa/spaq.hpp"
#include "odvqa/temporal.hpp"

namespace odvqa {

/// Frames for `videos` videos with `clips` clips each. `frames` is
/// [3, videos * clips, 3, H, W]: previous, centre and next frame of every
/// clip, video-major then clip order, channels RGB in [0, 1].
template <typename T>
struct ClipBatch {
    Tensor<T> frames;
    std::size_t videos = 0;
    std::size_t clips = 0;
};

/// Intermediate tensors of one forward pass.
template <typename T>
struct ForwardTrace {
    Var<T> pixel_maps;  // P for every frame fed to SPAQ, [3N or N, C, h, w]
    Var<T> frame_maps;  // F, [N, C, h, w]
    Var<T> tubelet;     // V, [B, S, h, w, C]
    Var<T> reweighted;  // V'
    Var<T> scores;      // [B]
};

template <typename T>
class Model {
public:
    explicit Model(const ModelConfig& cfg);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParameterStore<T>& parameters() { return store_; }
    const ParameterStore<T>& parameters() const { return store_; }

    /// Weights ~ N(0, 2 / fan_in); biases and shifts 0; BN scales 1; running variance 1.
    void initialize(std::uint64_t seed);

    ForwardTrace<T> trace(Tape<T>& tape, const ClipBatch<T>& batch, BnMode mode) const;
    Var<T> forward(Tape<T>& tape, const ClipBatch<T>& batch, BnMode mode) const {
        return trace(tape, batch, mode).scores;
    }

    const Spaq<T>& spaq() const { return *spaq_; }
    const Mpaq<T>* mpaq() const { return mpaq_.get(); }
    const Mftn<T>& mftn() const { return *mftn_; }
    const Aqr<T>& aqr() const { return *aqr_; }

private:
    ModelConfig cfg_;
    ParameterStore<T> store_;
    std::unique_ptr<Spaq<T>> spaq_;
    std::unique_ptr<Mpaq<T>> mpaq_;
    std::unique_ptr<Mftn<T>> mftn_;
    std::unique_ptr<Aqr<T>> aqr_;
};

/// Throws ShapeError unless H and W are multiples of 8 of at least 16, as the
/// three stride-2 stages and the two pooling stages of the head require.
void require_frame_extents(std::size_t height, std::size_t width);

/// Weights ~ N(0, 2 / fan_in); biases and shifts 0; BN scales 1; running variance 1.
template <typename T>
void initialize_parameters(ParameterStore<T>& store, std::uint64_t seed);

/// Fan-in of a weight tensor: elements per output row.
inline std::size_t fan_in(const Shape& weight_shape) { return numel(weight_shape) / weight_shape.front(); }

}  // namespace odvqa
