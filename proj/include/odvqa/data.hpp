#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "odvqa/tensor.hpp"

// Dataset manifests, frame decoding and the synthetic distortion generator.
//
// Manifest: one video per line of space-separated key=value fields
//   id=c00_l0 source=c00_l0.odv format=raw frames=30 height=32 width=64 score=10 split=train
// '#' starts a comment. `source` is relative to the manifest's directory.
//
// Raw video: "ODVRAW01" | u32 height | u32 width | u32 frames | frames * H * W * 3 bytes RGB.
// PPM video: a directory of binary P6 files frame_00000.ppm, frame_00001.ppm, ...

namespace odvqa {

/// Malformed or missing input data. `where` names the entry, line or file.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FrameFormat { raw, ppm };
enum class Split { train, test };

struct VideoEntry {
    std::string id;
    std::filesystem::path source;  // as written in the manifest
    FrameFormat format = FrameFormat::raw;
    std::size_t frames = 0, height = 0, width = 0;
    double score = 0.0;  // raw 0..100 scale
    Split split = Split::train;

    bool operator==(const VideoEntry&) const = default;
};

struct DatasetManifest {
    std::filesystem::path root;  // directory sources are resolved against
    std::vector<VideoEntry> videos;

    std::filesystem::path resolve(const VideoEntry& e) const { return root / e.source; }
    std::vector<const VideoEntry*> select(std::optional<Split> split) const;
    void validate() const;
};

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& root);
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& m);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);

std::string to_string(FrameFormat f);

/// A one-video manifest for a raw video file or a directory of PPM frames,
/// with extents read from the data itself. The score is 0.
DatasetManifest probe_video(const std::filesystem::path& path);
std::string to_string(Split s);

/// raw / 100; throws std::out_of_range outside [0, 100].
double normalize_score(double raw);

/// 8-bit interleaved RGB frame.
struct Image {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> rgb;  // height * width * 3

    bool operator==(const Image&) const = default;
};

void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

void write_raw_video(const std::filesystem::path& path, const std::vector<Image>& frames);

/// Reads frame t of an entry, checking extents against the manifest.
Image read_frame_image(const DatasetManifest& m, const VideoEntry& e, std::size_t t);

/// Channels-first [3, H, W] in [0, 1].
template <typename T>
Tensor<T> to_tensor(const Image& img);

template <typename T>
Tensor<T> load_frame(const DatasetManifest& m, const VideoEntry& e, std::size_t t);

/// Keeps decoded videos in memory; safe for concurrent use.
class FrameCache {
public:
    explicit FrameCache(const DatasetManifest& m) : manifest_(&m) {}
    const Image& frame(const VideoEntry& e, std::size_t t);

private:
    const DatasetManifest* manifest_;
    std::mutex mutex_;
    std::map<std::string, std::vector<Image>> videos_;
};

enum class Distortion { gaussian_blur, additive_noise, uniform_quantization };

struct SynthConfig {
    std::uint64_t seed = 1;
    std::size_t contents = 8;       // base contents
    std::size_t frames = 30;        // T
    std::size_t height = 32, width = 64;
    Distortion family = Distortion::gaussian_blur;
    std::size_t levels = 5;         // level 0 is the pristine video
    std::size_t test_contents = 0;  // the last `test_contents` contents are marked test
    std::size_t components = 24;    // sinusoids per colour channel in the base field
    double max_frequency = 8.0;     // cycles per frame width, band limit of the field
    double drift = 1.0;             // horizontal pixels per frame (camera pan)
    double vertical_drift = 0.25;   // vertical pixels per frame
    double blur_step = 0.7;         // gaussian sigma per level, pixels
    double noise_step = 0.05;       // noise standard deviation per level
    FrameFormat format = FrameFormat::raw;

    void validate() const;
};

/// Applies one key of a synth config file; returns false for unknown keys.
bool apply_synth_key(SynthConfig& cfg, const std::string& key, const std::string& value);

/// Canonical key=value text accepted back by apply_synth_key.
std::string to_text(const SynthConfig& cfg);

/// 10 + 80 * level / (levels - 1).
double synthetic_score(std::size_t level, std::size_t levels);

/// Pristine frame t of base content `content`.
Image synth_base_frame(const SynthConfig& cfg, std::size_t content, std::size_t t);

/// Distorted copy of a frame; level 0 returns the input unchanged.
Image synth_distort(const SynthConfig& cfg, const Image& img, std::size_t level, std::uint64_t noise_seed);

/// Writes every video plus manifest.txt under `out_dir`; returns the manifest.
DatasetManifest synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace odvqa
