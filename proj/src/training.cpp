#include "odvqa/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace odvqa {

std::vector<Clip> sample_clips(std::size_t frames, std::size_t clips, std::size_t interval, SampleMode mode,
                               std::mt19937_64* rng) {
    if (clips == 0) throw std::invalid_argument("sample_clips: need at least one clip");
    if (interval == 0) throw std::invalid_argument("sample_clips: frame interval must be at least 1");
    const std::size_t need = 2 * interval + clips;
    if (frames < need)
        throw BoundsError("video has " + std::to_string(frames) + " frames but " + std::to_string(clips) +
                          " clips at interval " + std::to_string(interval) + " need at least 2*" +
                          std::to_string(interval) + "+" + std::to_string(clips) + " = " + std::to_string(need));
    const std::size_t lo = interval, hi = frames - interval - 1;
    std::vector<std::size_t> centres;
    if (mode == SampleMode::eval) {
        if (clips == 1) {
            centres.push_back(lo + (hi - lo) / 2);
        } else {
            for (std::size_t k = 0; k < clips; ++k) centres.push_back(lo + k * (hi - lo) / (clips - 1));
        }
    } else {
        if (!rng) throw std::invalid_argument("sample_clips: train mode needs a random generator");
        std::vector<std::size_t> pool(hi - lo + 1);
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = lo + i;
        for (std::size_t k = 0; k < clips; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
            std::swap(pool[k], pool[pick(*rng)]);
        }
        centres.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(clips));
        std::sort(centres.begin(), centres.end());
    }
    std::vector<Clip> out;
    for (std::size_t c : centres) out.push_back({c - interval, c, c + interval});
    return out;
}

void require_clip_bounds(const VideoEntry& e, std::size_t clips, std::size_t interval) {
    try {
        sample_clips(e.frames, clips, interval, SampleMode::eval);
    } catch (const BoundsError& err) {
        throw BoundsError("video '" + e.id + "': " + err.what());
    }
}

template <typename T>
void adam_update(Tensor<T>& value, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v, std::size_t step,
                 const AdamOptions& opt) {
    if (grad.shape() != value.shape() || m.shape() != value.shape() || v.shape() != value.shape())
        throw ShapeError("adam: shapes differ: value " + to_string(value.shape()) + ", grad " + to_string(grad.shape()) +
                         ", moments " + to_string(m.shape()) + " / " + to_string(v.shape()));
    if (step == 0) throw std::invalid_argument("adam: step counts from 1");
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = static_cast<double>(grad[i]) + opt.weight_decay * static_cast<double>(value[i]);
        const double mi = opt.beta1 * static_cast<double>(m[i]) + (1.0 - opt.beta1) * g;
        const double vi = opt.beta2 * static_cast<double>(v[i]) + (1.0 - opt.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        value[i] = static_cast<T>(static_cast<double>(value[i]) -
                                  opt.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + opt.eps));
    }
}

template <typename T>
Adam<T>::Adam(ParameterStore<T>& store, AdamOptions options) : store_(&store), options_(options) {
    for (const auto& p : store.all()) {
        m_.emplace_back(p.value.shape());
        v_.emplace_back(p.value.shape());
    }
}

template <typename T>
void Adam<T>::step() {
    auto& params = store_->all();
    if (params.size() != m_.size()) throw std::logic_error("adam: parameter store changed after construction");
    ++steps_;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.trainable) continue;
        adam_update(p.value, p.grad, m_[i], v_[i], steps_, options_);
    }
}

BatchSampler::BatchSampler(std::vector<const VideoEntry*> videos, const TrainConfig& cfg, std::uint64_t seed)
    : videos_(std::move(videos)), batch_(cfg.batch_size), clips_(cfg.clips), interval_(cfg.frame_interval), rng_(seed) {
    if (videos_.empty()) throw DataError("training: the manifest has no training videos");
    for (const auto* v : videos_) require_clip_bounds(*v, clips_, interval_);
}

std::vector<BatchItem> BatchSampler::next() {
    std::vector<std::size_t> order(videos_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<BatchItem> out;
    for (std::size_t k = 0; k < batch_; ++k) {
        std::size_t idx;
        if (videos_.size() >= batch_) {
            std::uniform_int_distribution<std::size_t> pick(k, order.size() - 1);
            std::swap(order[k], order[pick(rng_)]);
            idx = order[k];
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, order.size() - 1);
            idx = pick(rng_);
        }
        const VideoEntry* v = videos_[idx];
        out.push_back({v, sample_clips(v->frames, clips_, interval_, SampleMode::train, &rng_)});
    }
    return out;
}

template <typename T>
ClipBatch<T> assemble_batch(FrameCache& cache, const std::vector<BatchItem>& items, Tensor<T>* targets) {
    if (items.empty()) throw std::invalid_argument("assemble_batch: no videos");
    const std::size_t clips = items[0].clips.size();
    const std::size_t h = items[0].video->height, w = items[0].video->width;
    for (const auto& it : items) {
        if (it.video->height != h || it.video->width != w)
            throw DataError("video '" + it.video->id + "': extents " + std::to_string(it.video->height) + "x" +
                            std::to_string(it.video->width) + " differ from the batch's " + std::to_string(h) + "x" +
                            std::to_string(w));
        if (it.clips.size() != clips) throw std::invalid_argument("assemble_batch: clip counts differ");
    }
    const std::size_t n = items.size() * clips, frame = 3 * h * w, pix = h * w;
    ClipBatch<T> b;
    b.videos = items.size();
    b.clips = clips;
    b.frames = Tensor<T>({3, n, 3, h, w});
    for (std::size_t v = 0; v < items.size(); ++v)
        for (std::size_t c = 0; c < clips; ++c) {
            const Clip& cl = items[v].clips[c];
            const std::size_t idx[3] = {cl.prev, cl.centre, cl.next};
            for (std::size_t r = 0; r < 3; ++r) {
                const Image& img = cache.frame(*items[v].video, idx[r]);
                T* dst = b.frames.data() + (r * n + v * clips + c) * frame;
                for (std::size_t p = 0; p < pix; ++p)
                    for (std::size_t ch = 0; ch < 3; ++ch) dst[ch * pix + p] = static_cast<T>(img.rgb[p * 3 + ch]) / T(255);
            }
        }
    if (targets) {
        *targets = Tensor<T>({items.size()});
        for (std::size_t v = 0; v < items.size(); ++v) (*targets)[v] = static_cast<T>(normalize_score(items[v].video->score));
    }
    return b;
}

std::string format_log_line(const TrainLogRecord& r, const std::string& config_hash) {
    std::ostringstream os;
    os << r.iteration << ' ' << std::setprecision(9) << r.loss << ' ' << config_hash;
    return os.str();
}

std::uint64_t init_seed(std::uint64_t seed) { return fnv1a64("init:" + std::to_string(seed)); }
std::uint64_t sampler_seed(std::uint64_t seed) { return fnv1a64("sampler:" + std::to_string(seed)); }

template <typename T>
std::vector<TrainLogRecord> train_loop(Model<T>& model, const DatasetManifest& manifest, const TrainConfig& cfg,
                                       FrameCache& cache, const std::function<void(const TrainLogRecord&)>& on_iteration) {
    cfg.validate();
    BatchSampler sampler(manifest.select(Split::train), cfg, sampler_seed(cfg.seed));
    model.initialize(init_seed(cfg.seed));
    Adam<T> adam(model.parameters(), {cfg.learning_rate, cfg.weight_decay});
    std::vector<TrainLogRecord> log;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        Tensor<T> targets;
        const ClipBatch<T> batch = assemble_batch<T>(cache, sampler.next(), &targets);
        model.parameters().zero_grad();
        Tape<T> tape;
        const Var<T> loss = mse_loss(model.forward(tape, batch, BnMode::train), targets);
        const double value = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(value)) throw std::runtime_error("training: loss became non-finite at iteration " + std::to_string(it));
        tape.backward(Tensor<T>::scalar(T(1)));
        adam.step();
        TrainLogRecord r{it, value,
                         std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()};
        log.push_back(r);
        if (on_iteration) on_iteration(r);
    }
    return log;
}

template <typename T>
double score_video(const Model<T>& model, FrameCache& cache, const VideoEntry& e, std::size_t clips,
                   std::size_t interval) {
    require_clip_bounds(e, clips, interval);
    const std::vector<BatchItem> items{{&e, sample_clips(e.frames, clips, interval, SampleMode::eval)}};
    const ClipBatch<T> batch = assemble_batch<T>(cache, items);
    Tape<T> tape(false);
    return static_cast<double>(model.forward(tape, batch, BnMode::infer).value()[0]);
}

#define ODVQA_INSTANTIATE_TRAINING(T)                                                                             \
    template void adam_update(Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, std::size_t, const AdamOptions&); \
    template class Adam<T>;                                                                                       \
    template ClipBatch<T> assemble_batch(FrameCache&, const std::vector<BatchItem>&, Tensor<T>*);                 \
    template std::vector<TrainLogRecord> train_loop(Model<T>&, const DatasetManifest&, const TrainConfig&,         \
                                                    FrameCache&, const std::function<void(const TrainLogRecord&)>&); \
    template double score_video(const Model<T>&, FrameCache&, const VideoEntry&, std::size_t, std::size_t);

ODVQA_INSTANTIATE_TRAINING(float)
ODVQA_INSTANTIATE_TRAINING(double)

}  // namespace odvqa
