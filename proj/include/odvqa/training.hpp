#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "odvqa/config.hpp"
#include "odvqa/data.hpp"
#include "odvqa/model.hpp"

namespace odvqa {

/// A video too short for the requested clip sampling.
class BoundsError : public DataError {
public:
    using DataError::DataError;
};

struct Clip {
    std::size_t prev = 0, centre = 0, next = 0;
    bool operator==(const Clip&) const = default;
};

enum class SampleMode { train, eval };

/// S clips (t - dt, t, t + dt) with centres in [dt, T - dt - 1], in time order.
/// Eval places centres at floor(lo + k (hi - lo) / (S - 1)) (the middle when
/// S = 1); train draws S distinct centres uniformly. Needs T >= 2 dt + S.
std::vector<Clip> sample_clips(std::size_t frames, std::size_t clips, std::size_t interval, SampleMode mode,
                               std::mt19937_64* rng = nullptr);

/// Throws BoundsError naming the minimum frame count if the video is too short.
void require_clip_bounds(const VideoEntry& e, std::size_t clips, std::size_t interval);

struct AdamOptions {
    double learning_rate = 3e-4;
    double weight_decay = 0.0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// One Adam update with bias correction; weight decay is added to the gradient
/// (L2 coupling). `step` counts from 1.
template <typename T>
void adam_update(Tensor<T>& value, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v, std::size_t step,
                 const AdamOptions& opt);

template <typename T>
class Adam {
public:
    Adam(ParameterStore<T>& store, AdamOptions options);

    /// Updates every trainable parameter from its accumulated gradient.
    void step();
    std::size_t steps() const { return steps_; }
    const Tensor<T>& first_moment(std::size_t i) const { return m_[i]; }
    const Tensor<T>& second_moment(std::size_t i) const { return v_[i]; }

private:
    ParameterStore<T>* store_;
    AdamOptions options_;
    std::vector<Tensor<T>> m_, v_;
    std::size_t steps_ = 0;
};

struct BatchItem {
    const VideoEntry* video = nullptr;
    std::vector<Clip> clips;
};

/// Draws training mini-batches: batch_size distinct videos (with replacement
/// only when the split has fewer), each with freshly sampled clips.
class BatchSampler {
public:
    BatchSampler(std::vector<const VideoEntry*> videos, const TrainConfig& cfg, std::uint64_t seed);
    std::vector<BatchItem> next();

private:
    std::vector<const VideoEntry*> videos_;
    std::size_t batch_, clips_, interval_;
    std::mt19937_64 rng_;
};

/// Stacks the frames of the selected clips; targets are normalized scores.
template <typename T>
ClipBatch<T> assemble_batch(FrameCache& cache, const std::vector<BatchItem>& items, Tensor<T>* targets = nullptr);

struct TrainLogRecord {
    std::size_t iteration = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

/// "iteration loss config_hash" with the loss at 9 significant digits.
std::string format_log_line(const TrainLogRecord& r, const std::string& config_hash);

/// Seeds derived from the run seed.
std::uint64_t init_seed(std::uint64_t seed);
std::uint64_t sampler_seed(std::uint64_t seed);

/// Initializes the model from cfg.seed and trains it on the manifest's train split.
template <typename T>
std::vector<TrainLogRecord> train_loop(Model<T>& model, const DatasetManifest& manifest, const TrainConfig& cfg,
                                       FrameCache& cache,
                                       const std::function<void(const TrainLogRecord&)>& on_iteration = {});

/// Eval-mode score of one video on the normalized [0, 1] scale.
template <typename T>
double score_video(const Model<T>& model, FrameCache& cache, const VideoEntry& e, std::size_t clips,
                   std::size_t interval);

}  // namespace odvqa
