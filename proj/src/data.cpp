#include "odvqa/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <iomanip>
#include <sstream>

#include "odvqa/config.hpp"

namespace odvqa {
namespace {

constexpr char kRawMagic[8] = {'O', 'D', 'V', 'R', 'A', 'W', '0', '1'};
constexpr std::size_t kRawHeader = 8 + 3 * 4;

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::string frame_name(std::size_t t) {
    std::ostringstream os;
    os << "frame_" << std::setw(5) << std::setfill('0') << t << ".ppm";
    return os.str();
}

std::string fmt_score(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

// Mixes seed material into well-spread 64-bit values.
std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path, const std::string& what) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(what + ": cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

std::string to_string(FrameFormat f) { return f == FrameFormat::raw ? "raw" : "ppm"; }
std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

double normalize_score(double raw) {
    if (!(raw >= 0.0 && raw <= 100.0)) throw std::out_of_range("score " + fmt_score(raw) + " outside [0, 100]");
    return raw / 100.0;
}

std::vector<const VideoEntry*> DatasetManifest::select(std::optional<Split> split) const {
    std::vector<const VideoEntry*> out;
    for (const auto& v : videos)
        if (!split || v.split == *split) out.push_back(&v);
    return out;
}

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    for (const auto& v : videos) {
        if (v.id.empty()) throw DataError("manifest: entry with empty id");
        if (!ids.insert(v.id).second) throw DataError("manifest: duplicate id '" + v.id + "'");
        if (v.frames == 0 || v.height == 0 || v.width == 0)
            throw DataError("manifest: entry '" + v.id + "' needs positive frames, height and width");
        if (!(v.score >= 0.0 && v.score <= 100.0))
            throw DataError("manifest: entry '" + v.id + "' score " + fmt_score(v.score) + " outside [0, 100]");
        if (v.source.empty()) throw DataError("manifest: entry '" + v.id + "' has no source");
    }
}

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& root) {
    DatasetManifest m;
    m.root = root;
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        std::istringstream fields(line);
        std::string tok;
        VideoEntry e;
        std::set<std::string> seen;
        const auto where = [&](const std::string& key) { return "manifest line " + std::to_string(n) + ", field '" + key + "'"; };
        while (fields >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos || eq == 0) throw DataError("manifest line " + std::to_string(n) + ": expected key=value, got '" + tok + "'");
            const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
            if (!seen.insert(key).second) throw DataError(where(key) + ": given twice");
            try {
                if (key == "id") e.id = value;
                else if (key == "source") e.source = value;
                else if (key == "format") {
                    if (value == "raw") e.format = FrameFormat::raw;
                    else if (value == "ppm") e.format = FrameFormat::ppm;
                    else throw DataError(where(key) + ": expected raw or ppm");
                } else if (key == "frames") e.frames = parse_uint(key, value);
                else if (key == "height") e.height = parse_uint(key, value);
                else if (key == "width") e.width = parse_uint(key, value);
                else if (key == "score") e.score = parse_real(key, value);
                else if (key == "split") {
                    if (value == "train") e.split = Split::train;
                    else if (value == "test") e.split = Split::test;
                    else throw DataError(where(key) + ": expected train or test");
                } else throw DataError(where(key) + ": unknown field");
            } catch (const ConfigError& err) {
                throw DataError(where(key) + ": " + err.what());
            }
        }
        if (seen.empty()) continue;
        for (const char* req : {"id", "source", "frames", "height", "width", "score"})
            if (!seen.count(req)) throw DataError("manifest line " + std::to_string(n) + ": missing field '" + req + "'");
        m.videos.push_back(std::move(e));
    }
    m.validate();
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    const auto bytes = read_all(path, "manifest");
    return parse_manifest(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

std::string format_manifest(const DatasetManifest& m) {
    std::ostringstream os;
    for (const auto& v : m.videos)
        os << "id=" << v.id << " source=" << v.source.generic_string() << " format=" << to_string(v.format)
           << " frames=" << v.frames << " height=" << v.height << " width=" << v.width << " score=" << fmt_score(v.score)
           << " split=" << to_string(v.split) << '\n';
    return os.str();
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    m.validate();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("manifest: cannot write " + path.string());
    f << format_manifest(m);
    if (!f) throw DataError("manifest: write failed for " + path.string());
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("ppm: cannot write " + path.string());
    f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!f) throw DataError("ppm: write failed for " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
    const auto bytes = read_all(path, "ppm");
    std::size_t pos = 0;
    // Header tokens separated by whitespace, with '#' comments.
    const auto token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    if (token() != "P6") throw DataError("ppm: " + path.string() + " is not a binary P6 file");
    Image img;
    try {
        img.width = std::stoul(token());
        img.height = std::stoul(token());
        if (std::stoul(token()) != 255) throw DataError("ppm: " + path.string() + " must have maxval 255");
    } catch (const std::logic_error&) {
        throw DataError("ppm: malformed header in " + path.string());
    }
    ++pos;  // single whitespace before the raster
    const std::size_t n = img.width * img.height * 3;
    if (img.width == 0 || img.height == 0 || bytes.size() < pos + n)
        throw DataError("ppm: " + path.string() + " is truncated");
    img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return img;
}

void write_raw_video(const std::filesystem::path& path, const std::vector<Image>& frames) {
    if (frames.empty()) throw DataError("raw video: no frames for " + path.string());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("raw video: cannot write " + path.string());
    f.write(kRawMagic, 8);
    put_u32(f, static_cast<std::uint32_t>(frames[0].height));
    put_u32(f, static_cast<std::uint32_t>(frames[0].width));
    put_u32(f, static_cast<std::uint32_t>(frames.size()));
    for (const auto& img : frames) {
        if (img.height != frames[0].height || img.width != frames[0].width)
            throw DataError("raw video: frames differ in size for " + path.string());
        f.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    }
    if (!f) throw DataError("raw video: write failed for " + path.string());
}

namespace {

std::vector<Image> read_raw_video(const DatasetManifest& m, const VideoEntry& e) {
    const auto path = m.resolve(e);
    const auto bytes = read_all(path, "video '" + e.id + "'");
    if (bytes.size() < kRawHeader || std::memcmp(bytes.data(), kRawMagic, 8) != 0)
        throw DataError("video '" + e.id + "': " + path.string() + " is not a raw video file");
    const std::size_t h = get_u32(bytes.data() + 8), w = get_u32(bytes.data() + 12), t = get_u32(bytes.data() + 16);
    if (h != e.height || w != e.width || t != e.frames)
        throw DataError("video '" + e.id + "': file holds " + std::to_string(t) + " frames of " + std::to_string(h) + "x" +
                        std::to_string(w) + ", manifest says " + std::to_string(e.frames) + " of " +
                        std::to_string(e.height) + "x" + std::to_string(e.width));
    const std::size_t n = h * w * 3;
    if (bytes.size() != kRawHeader + t * n)
        throw DataError("video '" + e.id + "': " + path.string() + " is truncated or has trailing bytes");
    std::vector<Image> frames(t);
    for (std::size_t i = 0; i < t; ++i) {
        frames[i].height = h;
        frames[i].width = w;
        const auto* p = bytes.data() + kRawHeader + i * n;
        frames[i].rgb.assign(p, p + n);
    }
    return frames;
}

Image read_ppm_frame(const DatasetManifest& m, const VideoEntry& e, std::size_t t) {
    const auto path = m.resolve(e) / frame_name(t);
    Image img;
    try {
        img = read_ppm(path);
    } catch (const DataError& err) {
        throw DataError("video '" + e.id + "' frame " + std::to_string(t) + ": " + err.what());
    }
    if (img.height != e.height || img.width != e.width)
        throw DataError("video '" + e.id + "' frame " + std::to_string(t) + ": size " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " differs from the manifest");
    return img;
}

}  // namespace

Image read_frame_image(const DatasetManifest& m, const VideoEntry& e, std::size_t t) {
    if (t >= e.frames)
        throw DataError("video '" + e.id + "': frame " + std::to_string(t) + " out of range (T = " + std::to_string(e.frames) + ")");
    if (e.format == FrameFormat::ppm) return read_ppm_frame(m, e, t);
    return read_raw_video(m, e)[t];
}

template <typename T>
Tensor<T> to_tensor(const Image& img) {
    const std::size_t pix = img.height * img.width;
    Tensor<T> out({3, img.height, img.width});
    for (std::size_t p = 0; p < pix; ++p)
        for (std::size_t c = 0; c < 3; ++c) out[c * pix + p] = static_cast<T>(img.rgb[p * 3 + c]) / T(255);
    return out;
}

template <typename T>
Tensor<T> load_frame(const DatasetManifest& m, const VideoEntry& e, std::size_t t) {
    return to_tensor<T>(read_frame_image(m, e, t));
}

DatasetManifest probe_video(const std::filesystem::path& path) {
    DatasetManifest m;
    m.root = path.parent_path();
    VideoEntry e;
    e.id = path.filename().string();
    e.source = path.filename();
    std::error_code ec;
    if (std::filesystem::is_directory(path, ec)) {
        e.format = FrameFormat::ppm;
        while (std::filesystem::exists(path / frame_name(e.frames), ec)) ++e.frames;
        if (e.frames == 0) throw DataError("video " + path.string() + ": no " + frame_name(0) + " in directory");
        const Image first = read_ppm(path / frame_name(0));
        e.height = first.height;
        e.width = first.width;
    } else {
        const auto bytes = read_all(path, "video " + path.string());
        if (bytes.size() < kRawHeader || std::memcmp(bytes.data(), kRawMagic, 8) != 0)
            throw DataError("video " + path.string() + " is neither a raw video file nor a PPM frame directory");
        e.height = get_u32(bytes.data() + 8);
        e.width = get_u32(bytes.data() + 12);
        e.frames = get_u32(bytes.data() + 16);
    }
    m.videos.push_back(e);
    m.validate();
    return m;
}

const Image& FrameCache::frame(const VideoEntry& e, std::size_t t) {
    if (t >= e.frames)
        throw DataError("video '" + e.id + "': frame " + std::to_string(t) + " out of range (T = " + std::to_string(e.frames) + ")");
    std::lock_guard lock(mutex_);
    auto it = videos_.find(e.id);
    if (it == videos_.end()) {
        std::vector<Image> frames;
        if (e.format == FrameFormat::raw) {
            frames = read_raw_video(*manifest_, e);
        } else {
            for (std::size_t i = 0; i < e.frames; ++i) frames.push_back(read_ppm_frame(*manifest_, e, i));
        }
        it = videos_.emplace(e.id, std::move(frames)).first;
    }
    return it->second[t];
}

void SynthConfig::validate() const {
    if (levels < 2) throw ConfigError("levels", "levels: must be at least 2, got " + std::to_string(levels));
    if (contents == 0) throw ConfigError("contents", "contents: must be at least 1");
    if (frames == 0) throw ConfigError("frames", "frames: must be at least 1");
    if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0)
        throw ConfigError("height", "height/width: must be positive multiples of 8, got " + std::to_string(height) + "x" +
                                        std::to_string(width));
    if (test_contents >= contents && contents > 1)
        throw ConfigError("test_contents", "test_contents: must leave at least one training content");
    if (components == 0) throw ConfigError("components", "components: must be at least 1");
    if (!(max_frequency >= 1.0)) throw ConfigError("max_frequency", "max_frequency: must be at least 1");
    if (family == Distortion::uniform_quantization && levels > 8)
        throw ConfigError("levels", "levels: uniform_quantization supports at most 8 levels");
    if (!(blur_step >= 0.0) || !(noise_step >= 0.0)) throw ConfigError("blur_step", "distortion steps must be non-negative");
}

bool apply_synth_key(SynthConfig& c, const std::string& key, const std::string& value) {
    if (key == "seed") c.seed = parse_uint(key, value);
    else if (key == "contents") c.contents = parse_uint(key, value);
    else if (key == "frames") c.frames = parse_uint(key, value);
    else if (key == "height") c.height = parse_uint(key, value);
    else if (key == "width") c.width = parse_uint(key, value);
    else if (key == "levels") c.levels = parse_uint(key, value);
    else if (key == "test_contents") c.test_contents = parse_uint(key, value);
    else if (key == "components") c.components = parse_uint(key, value);
    else if (key == "max_frequency") c.max_frequency = parse_real(key, value);
    else if (key == "drift") c.drift = parse_real(key, value);
    else if (key == "vertical_drift") c.vertical_drift = parse_real(key, value);
    else if (key == "blur_step") c.blur_step = parse_real(key, value);
    else if (key == "noise_step") c.noise_step = parse_real(key, value);
    else if (key == "family") {
        if (value == "gaussian_blur") c.family = Distortion::gaussian_blur;
        else if (value == "additive_noise") c.family = Distortion::additive_noise;
        else if (value == "uniform_quantization") c.family = Distortion::uniform_quantization;
        else throw ConfigError(key, key + ": expected gaussian_blur, additive_noise or uniform_quantization, got '" + value + "'");
    } else if (key == "format") {
        if (value == "raw") c.format = FrameFormat::raw;
        else if (value == "ppm") c.format = FrameFormat::ppm;
        else throw ConfigError(key, key + ": expected raw or ppm, got '" + value + "'");
    } else return false;
    return true;
}

std::string to_text(const SynthConfig& c) {
    static const char* families[] = {"gaussian_blur", "additive_noise", "uniform_quantization"};
    std::ostringstream os;
    os << std::setprecision(17) << "seed=" << c.seed << "\ncontents=" << c.contents << "\nframes=" << c.frames
       << "\nheight=" << c.height << "\nwidth=" << c.width << "\nfamily=" << families[static_cast<int>(c.family)]
       << "\nlevels=" << c.levels << "\ntest_contents=" << c.test_contents << "\ncomponents=" << c.components
       << "\nmax_frequency=" << c.max_frequency << "\ndrift=" << c.drift << "\nvertical_drift=" << c.vertical_drift
       << "\nblur_step=" << c.blur_step << "\nnoise_step=" << c.noise_step << "\nformat=" << to_string(c.format) << '\n';
    return os.str();
}

double synthetic_score(std::size_t level, std::size_t levels) {
    return 10.0 + 80.0 * static_cast<double>(level) / static_cast<double>(levels - 1);
}

Image synth_base_frame(const SynthConfig& cfg, std::size_t content, std::size_t t) {
    struct Wave {
        double fx, fy, phase, amp[3];
    };
    std::mt19937_64 rng(mix(cfg.seed, content));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto max_fx = static_cast<long long>(std::floor(cfg.max_frequency));
    std::vector<Wave> waves(cfg.components);
    for (auto& w : waves) {
        // Integer horizontal frequency keeps the field periodic in longitude.
        w.fx = static_cast<double>(static_cast<long long>(unit(rng) * static_cast<double>(2 * max_fx + 1)) - max_fx);
        w.fy = unit(rng) * 0.5 * cfg.max_frequency;
        w.phase = 2.0 * std::numbers::pi * unit(rng);
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.components));
        for (double& a : w.amp) a = (unit(rng) - 0.5) * 0.9 * scale;
    }
    const double base[3] = {0.35 + 0.3 * unit(rng), 0.35 + 0.3 * unit(rng), 0.35 + 0.3 * unit(rng)};
    Image img{cfg.height, cfg.width, std::vector<std::uint8_t>(cfg.height * cfg.width * 3)};
    const double W = static_cast<double>(cfg.width), H = static_cast<double>(cfg.height);
    const double dx = cfg.drift * static_cast<double>(t), dy = cfg.vertical_drift * static_cast<double>(t);
    for (std::size_t i = 0; i < cfg.height; ++i)
        for (std::size_t j = 0; j < cfg.width; ++j) {
            double v[3] = {base[0], base[1], base[2]};
            for (const auto& w : waves) {
                const double s = std::sin(2.0 * std::numbers::pi *
                                              (w.fx * (static_cast<double>(j) + dx) / W + w.fy * (static_cast<double>(i) + dy) / H) +
                                          w.phase);
                for (int c = 0; c < 3; ++c) v[c] += w.amp[c] * s;
            }
            for (int c = 0; c < 3; ++c) img.rgb[(i * cfg.width + j) * 3 + c] = to_byte(v[c]);
        }
    return img;
}

namespace {

// Separable gaussian; longitude wraps, latitude reflects at the poles' edge rows.
Image gaussian_blur(const Image& img, double sigma) {
    const long long radius = static_cast<long long>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (long long d = -radius; d <= radius; ++d) {
        const double v = std::exp(-0.5 * static_cast<double>(d * d) / (sigma * sigma));
        k[static_cast<std::size_t>(d + radius)] = v;
        total += v;
    }
    for (double& v : k) v /= total;
    const long long h = static_cast<long long>(img.height), w = static_cast<long long>(img.width);
    std::vector<double> tmp(img.rgb.size()), out(img.rgb.size());
    for (long long i = 0; i < h; ++i)
        for (long long j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (long long d = -radius; d <= radius; ++d) {
                    const long long jj = ((j + d) % w + w) % w;
                    s += k[static_cast<std::size_t>(d + radius)] * img.rgb[static_cast<std::size_t>((i * w + jj) * 3 + c)];
                }
                tmp[static_cast<std::size_t>((i * w + j) * 3 + c)] = s;
            }
    for (long long i = 0; i < h; ++i)
        for (long long j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (long long d = -radius; d <= radius; ++d) {
                    long long ii = i + d;
                    while (ii < 0 || ii >= h) ii = ii < 0 ? -ii - 1 : 2 * h - 1 - ii;
                    s += k[static_cast<std::size_t>(d + radius)] * tmp[static_cast<std::size_t>((ii * w + j) * 3 + c)];
                }
                out[static_cast<std::size_t>((i * w + j) * 3 + c)] = s;
            }
    Image r = img;
    for (std::size_t n = 0; n < out.size(); ++n) r.rgb[n] = to_byte(out[n] / 255.0);
    return r;
}

}  // namespace

Image synth_distort(const SynthConfig& cfg, const Image& img, std::size_t level, std::uint64_t noise_seed) {
    if (level == 0) return img;
    switch (cfg.family) {
        case Distortion::gaussian_blur: return gaussian_blur(img, cfg.blur_step * static_cast<double>(level));
        case Distortion::additive_noise: {
            std::mt19937_64 rng(noise_seed);
            std::normal_distribution<double> noise(0.0, cfg.noise_step * static_cast<double>(level));
            Image r = img;
            for (auto& v : r.rgb) v = to_byte(static_cast<double>(v) / 255.0 + noise(rng));
            return r;
        }
        case Distortion::uniform_quantization: {
            const unsigned step = 1u << level;
            Image r = img;
            for (auto& v : r.rgb) v = static_cast<std::uint8_t>(std::min(255u, (v / step) * step + step / 2));
            return r;
        }
    }
    return img;
}

DatasetManifest synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("synth: cannot create " + out_dir.string() + ": " + ec.message());
    DatasetManifest m;
    m.root = out_dir;
    for (std::size_t c = 0; c < cfg.contents; ++c) {
        std::vector<Image> base(cfg.frames);
        for (std::size_t t = 0; t < cfg.frames; ++t) base[t] = synth_base_frame(cfg, c, t);
        for (std::size_t l = 0; l < cfg.levels; ++l) {
            std::ostringstream id;
            id << 'c' << std::setw(2) << std::setfill('0') << c << "_l" << l;
            VideoEntry e;
            e.id = id.str();
            e.format = cfg.format;
            e.frames = cfg.frames;
            e.height = cfg.height;
            e.width = cfg.width;
            e.score = synthetic_score(l, cfg.levels);
            e.split = c + cfg.test_contents >= cfg.contents && cfg.test_contents > 0 ? Split::test : Split::train;
            std::vector<Image> frames(cfg.frames);
            for (std::size_t t = 0; t < cfg.frames; ++t)
                frames[t] = synth_distort(cfg, base[t], l, mix(mix(cfg.seed, c), mix(l, t)));
            if (cfg.format == FrameFormat::raw) {
                e.source = e.id + ".odv";
                write_raw_video(out_dir / e.source, frames);
            } else {
                e.source = e.id;
                std::filesystem::create_directories(out_dir / e.source, ec);
                if (ec) throw DataError("synth: cannot create " + (out_dir / e.source).string());
                for (std::size_t t = 0; t < cfg.frames; ++t) write_ppm(out_dir / e.source / frame_name(t), frames[t]);
            }
            m.videos.push_back(std::move(e));
        }
    }
    save_manifest(out_dir / "manifest.txt", m);
    return m;
}

template Tensor<float> to_tensor<float>(const Image&);
template Tensor<double> to_tensor<double>(const Image&);
template Tensor<float> load_frame<float>(const DatasetManifest&, const VideoEntry&, std::size_t);
template Tensor<double> load_frame<double>(const DatasetManifest&, const VideoEntry&, std::size_t);

}  // namespace odvqa
