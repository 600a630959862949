#include "odvqa/model.hpp"

#include <cmath>
#include <random>

namespace odvqa {

template <typename T>
Model<T>::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    spaq_ = std::make_unique<Spaq<T>>(store_, cfg_);
    if (cfg_.mpaq_enabled) mpaq_ = std::make_unique<Mpaq<T>>(store_, cfg_);
    mftn_ = std::make_unique<Mftn<T>>(store_, cfg_);
    aqr_ = std::make_unique<Aqr<T>>(store_, cfg_.channels);
}

void require_frame_extents(std::size_t height, std::size_t width) {
    if (height % 8 || width % 8 || height < 16 || width < 16)
        throw ShapeError("frames must be at least 16x16 with sides divisible by 8, got " + std::to_string(height) + "x" +
                         std::to_string(width));
}

template <typename T>
void initialize_parameters(ParameterStore<T>& store, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& p : store.all()) {
        const std::string& n = p.name;
        const auto ends_with = [&n](const std::string& suffix) {
            return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
        };
        if (ends_with(".weight")) {
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in(p.value.shape()))));
            for (auto& v : p.value.storage()) v = static_cast<T>(dist(rng));
        } else if (ends_with(".gamma") || ends_with(".running_var")) {
            p.value.fill(T(1));
        } else {
            p.value.fill(T(0));
        }
        p.grad = Tensor<T>(p.value.shape());
    }
}

template <typename T>
void Model<T>::initialize(std::uint64_t seed) {
    initialize_parameters(store_, seed);
}

template <typename T>
ForwardTrace<T> Model<T>::trace(Tape<T>& tape, const ClipBatch<T>& batch, BnMode mode) const {
    const Shape& s = batch.frames.shape();
    if (s.size() != 5 || s[0] != 3 || s[2] != 3)
        throw ShapeError("model: frames must be [3, N, 3, H, W], got " + to_string(s));
    if (batch.videos == 0 || batch.clips == 0 || s[1] != batch.videos * batch.clips)
        throw ShapeError("model: frame count " + std::to_string(s[1]) + " does not equal videos x clips = " +
                         std::to_string(batch.videos) + " x " + std::to_string(batch.clips));
    const std::size_t n = s[1], h = s[3], w = s[4];
    Context<T> ctx{tape, mode, cfg_.backbone == Backbone::spherical ? GridKind::spherical : GridKind::regular};
    ForwardTrace<T> tr;
    const Var<T> all = tape.constant(batch.frames);
    if (mpaq_) {
        tr.pixel_maps = spaq_->forward(ctx, reshape(all, {3 * n, 3, h, w}));
        const Shape ms = tr.pixel_maps.shape();
        const Shape one{n, ms[1], ms[2], ms[3]};
        const Var<T> grouped = reshape(tr.pixel_maps, {3, n * ms[1] * ms[2] * ms[3]});
        const auto part = [&](std::size_t i) { return reshape(slice(grouped, 0, i, i + 1), one); };
        tr.frame_maps = mpaq_->forward(ctx, part(0), part(1), part(2));
    } else {
        // Without motion masking only the centre frames matter.
        const Var<T> centre = reshape(slice(reshape(all, {3, n * 3 * h * w}), 0, 1, 2), {n, 3, h, w});
        tr.pixel_maps = spaq_->forward(ctx, centre);
        tr.frame_maps = tr.pixel_maps;
    }
    const Shape fs = tr.frame_maps.shape();
    tr.tubelet = permute(reshape(tr.frame_maps, {batch.videos, batch.clips, fs[1], fs[2], fs[3]}), {0, 1, 3, 4, 2});
    tr.reweighted = mftn_->forward(ctx, tr.tubelet).out;
    tr.scores = aqr_->forward(ctx, tr.reweighted);
    return tr;
}

template class Model<float>;
template class Model<double>;
template void initialize_parameters(ParameterStore<float>&, std::uint64_t);
template void initialize_parameters(ParameterStore<double>&, std::uint64_t);

}  // namespace odvqa
