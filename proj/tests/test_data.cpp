#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "odvqa/config.hpp"
#include "odvqa/data.hpp"

using namespace odvqa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("odvqa_test_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Spectral energy of the luma channel at radial frequencies above `cutoff`
// cycles per frame height, from a direct 2D DFT.
double high_band_energy(const Image& img, double cutoff) {
    const std::size_t H = img.height, W = img.width;
    std::vector<double> y(H * W);
    double mean = 0.0;
    for (std::size_t i = 0; i < H * W; ++i) {
        y[i] = (img.rgb[3 * i] + img.rgb[3 * i + 1] + img.rgb[3 * i + 2]) / 3.0;
        mean += y[i];
    }
    mean /= double(H * W);
    double e = 0.0;
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
            const double fu = double(u <= H / 2 ? u : H - u), fv = double(v <= W / 2 ? v : W - v) * double(H) / double(W);
            if (std::hypot(fu, fv) <= cutoff) continue;
            std::complex<double> acc = 0.0;
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    const double ph = -2.0 * std::numbers::pi * (double(u * i) / double(H) + double(v * j) / double(W));
                    acc += (y[i * W + j] - mean) * std::complex<double>(std::cos(ph), std::sin(ph));
                }
            e += std::norm(acc);
        }
    return e;
}

}  // namespace

TEST_CASE("score normalization") {
    CHECK(normalize_score(75) == 0.75);
    CHECK(normalize_score(0) == 0.0);
    CHECK(normalize_score(100) == 1.0);
    CHECK(normalize_score(50.5) == 0.505);
    CHECK_THROWS_AS(normalize_score(120), std::out_of_range);
    CHECK_THROWS_AS(normalize_score(-1), std::out_of_range);
    CHECK(synthetic_score(0, 5) == 10.0);
    CHECK(synthetic_score(4, 5) == 90.0);
    CHECK(synthetic_score(2, 5) == 50.0);
}

TEST_CASE("manifest round trip and validation") {
    const auto dir = scratch("manifest");
    DatasetManifest m;
    m.root = dir;
    m.videos.push_back({"a", "a.odv", FrameFormat::raw, 30, 32, 64, 42.5, Split::train});
    save_manifest(dir / "m.txt", m);
    const auto back = load_manifest(dir / "m.txt");
    CHECK(back.videos == m.videos);
    save_manifest(dir / "m2.txt", back);
    CHECK(slurp(dir / "m.txt") == slurp(dir / "m2.txt"));

    const std::string line = "id=a source=a.odv format=raw frames=30 height=32 width=64 score=10 split=train\n";
    try {
        parse_manifest(line + line, dir);
        FAIL("duplicate id accepted");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("a") != std::string::npos);
        CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
    }
    try {
        parse_manifest("id=hot source=x format=raw frames=30 height=32 width=64 score=120 split=train\n", dir);
        FAIL("score 120 accepted");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("hot") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_manifest("id=a source=x frames=3\n", dir), DataError);
    CHECK_THROWS_AS(parse_manifest("id=a source=x format=raw frames=abc height=32 width=64 score=1 split=train\n", dir),
                    DataError);
    CHECK_THROWS_AS(load_manifest(dir / "missing.txt"), DataError);
}

TEST_CASE("frame decoding") {
    const auto dir = scratch("frames");
    Image black{2, 3, std::vector<std::uint8_t>(18, 0)}, white{2, 3, std::vector<std::uint8_t>(18, 255)};
    Image known{2, 2, {0, 51, 102, 153, 204, 255, 1, 2, 3, 254, 128, 64}};
    fs::create_directories(dir / "v");
    write_ppm(dir / "v" / "frame_00000.ppm", black);
    write_ppm(dir / "v" / "frame_00001.ppm", white);
    CHECK(read_ppm(dir / "v" / "frame_00001.ppm") == white);

    DatasetManifest m = probe_video(dir / "v");
    REQUIRE(m.videos.size() == 1);
    CHECK(m.videos[0].frames == 2);
    CHECK(m.videos[0].height == 2);
    CHECK(m.videos[0].width == 3);
    const auto f0 = load_frame<float>(m, m.videos[0], 0), f1 = load_frame<float>(m, m.videos[0], 1);
    for (float v : f0.storage()) CHECK(v == 0.0f);
    for (float v : f1.storage()) CHECK(v == 1.0f);
    CHECK_THROWS_AS(load_frame<float>(m, m.videos[0], 2), DataError);

    const auto t = to_tensor<double>(known);
    CHECK(t.shape() == Shape{3, 2, 2});
    CHECK(t.at(0, 0, 0) == 0.0);
    CHECK(t.at(1, 0, 0) == 51.0 / 255.0);
    CHECK(t.at(2, 0, 1) == 1.0);
    CHECK(t.at(0, 1, 0) == 1.0 / 255.0);
    CHECK(t.at(1, 1, 1) == 128.0 / 255.0);

    write_raw_video(dir / "k.odv", {known, known});
    const auto raw = probe_video(dir / "k.odv");
    CHECK(raw.videos[0].frames == 2);
    CHECK(read_frame_image(raw, raw.videos[0], 1) == known);

    std::ofstream(dir / "bad.ppm", std::ios::binary) << "P6\n2 2\n255\nxx";
    CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), DataError);
}

TEST_CASE("synthetic generator") {
    SynthConfig cfg;
    cfg.contents = 2;
    cfg.levels = 4;
    cfg.frames = 8;
    const auto a = scratch("synth_a"), b = scratch("synth_b");
    const auto ma = synth_generate(cfg, a);
    synth_generate(cfg, b);
    CHECK(ma.videos.size() == 8);
    for (const auto& v : ma.videos) CHECK(slurp(a / v.source) == slurp(b / v.source));
    CHECK(slurp(a / "manifest.txt") == slurp(b / "manifest.txt"));

    // level 0 is the pristine content; scores rise strictly with level
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t t = 0; t < 8; t += 3)
            CHECK(read_frame_image(ma, ma.videos[c * 4], t) == synth_base_frame(cfg, c, t));
        for (std::size_t l = 1; l < 4; ++l) CHECK(ma.videos[c * 4 + l].score > ma.videos[c * 4 + l - 1].score);
    }

    SynthConfig other = cfg;
    other.seed = 2;
    CHECK_FALSE(synth_base_frame(other, 0, 0) == synth_base_frame(cfg, 0, 0));
    CHECK_FALSE(synth_base_frame(cfg, 0, 1) == synth_base_frame(cfg, 0, 0));
}

TEST_CASE("blur removes high-frequency energy monotonically") {
    SynthConfig cfg;
    cfg.levels = 5;
    for (std::size_t c = 0; c < 2; ++c) {
        const auto base = synth_base_frame(cfg, c, 2);
        double last = INFINITY;
        for (std::size_t l = 0; l < cfg.levels; ++l) {
            const double e = high_band_energy(synth_distort(cfg, base, l, 9), 4.0);
            CHECK(e < last);
            last = e;
        }
    }
}

TEST_CASE("synth configuration validation") {
    SynthConfig cfg;
    cfg.levels = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.levels = 3;
    cfg.height = 30;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    SynthConfig parsed;
    CHECK(apply_synth_key(parsed, "levels", "7"));
    CHECK(parsed.levels == 7);
    CHECK_FALSE(apply_synth_key(parsed, "colour", "red"));
    SynthConfig round;
    for (const auto& e : KeyValues::parse(to_text(parsed)).entries) CHECK(apply_synth_key(round, e.key, e.value));
    CHECK(to_text(round) == to_text(parsed));
}

TEST_CASE("train configuration text round trip and validation") {
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.clips = 4;
    tc.model.channels = 8;
    tc.model.reduction = 4;
    tc.model.sfi_mode = SfiMode::concat_ca;
    tc.model.backbone = Backbone::standard;
    const auto back = train_config_from_text(to_text(tc));
    CHECK(to_text(back) == to_text(tc));
    CHECK(fnv1a64(to_text(back)) == fnv1a64(to_text(tc)));
    CHECK(hex64(0xabcULL) == "0000000000000abc");

    TrainConfig bad;
    bad.batch_size = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.model.channels = 12;
    bad.model.reduction = 8;
    try {
        bad.validate();
        FAIL("indivisible reduction accepted");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "reduction");
    }
    TrainConfig t;
    CHECK_THROWS_AS(apply_train_key(t, "learning_rate", "fast"), ConfigError);
    CHECK_FALSE(apply_train_key(t, "flavour", "1"));
    CHECK_THROWS_AS(KeyValues::parse("a=1\na=2\n"), ConfigError);
    CHECK_THROWS_AS(KeyValues::parse("novalue\n"), ConfigError);
    CHECK(KeyValues::parse("# c\n a = 1 # tail\n").find("a")->value == "1");
}
