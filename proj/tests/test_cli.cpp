#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "odvqa/checkpoint.hpp"
#include "odvqa/cli.hpp"
#include "odvqa/config.hpp"
#include "odvqa/data.hpp"
#include "odvqa/model.hpp"

using namespace odvqa;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("odvqa_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const fs::path& dataset() {
    static const fs::path dir = [] {
        const auto d = scratch("data");
        std::ofstream(d / "synth.txt") << "contents=2\nlevels=3\nframes=12\nheight=16\nwidth=32\ntest_contents=1\n";
        const auto r = cli({"synth", "--config", (d / "synth.txt").string(), "--out", (d / "set").string()});
        REQUIRE(r.code == kExitOk);
        return d / "set";
    }();
    return dir;
}

fs::path write_config(const fs::path& dir, const std::string& extra = "") {
    const auto p = dir / "run.txt";
    std::ofstream(p) << "channels=8\nreduction=4\nstage_blocks=1,1,1\nbatch_size=2\nclips=2\nframe_interval=2\n"
                        "iterations=3\nseed=4\n"
                     << extra;
    return p;
}

fs::path zero_checkpoint(const fs::path& dir) {
    TrainConfig tc;
    tc.model.channels = 8;
    tc.model.reduction = 4;
    tc.model.stage_blocks = {1, 1, 1};
    tc.clips = 2;
    tc.frame_interval = 2;
    Model<double> model(tc.model);
    for (auto& p : model.parameters().all()) p.value.fill(0.0);
    model.parameters().find("aqr.fc2.bias")->value.fill(0.625);
    const auto path = dir / "zero.ckpt";
    write_checkpoint(path, snapshot(model.parameters(), to_text(tc)));
    return path;
}

}  // namespace

TEST_CASE("train without a manifest names the missing key and writes nothing") {
    const auto dir = scratch("nomanifest");
    const auto r = cli({"train", "--config", write_config(dir).string(), "--out", (dir / "o").string()});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("manifest") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "o"));

    const auto bad = cli({"train", "--config", write_config(dir, "reduction=3\n").string(), "--manifest",
                          (dataset() / "manifest.txt").string(), "--out", (dir / "o").string()});
    CHECK(bad.code == kExitConfig);
    CHECK(bad.err.find("reduction") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "o"));
    CHECK(cli({"train", "--config", write_config(dir, "flavour=1\n").string()}).code == kExitConfig);
    CHECK(cli({"bogus"}).code == kExitConfig);
}

TEST_CASE("same-seed training writes identical logs, and scoring is repeatable") {
    const auto dir = scratch("train");
    const auto cfg = write_config(dir).string(), manifest = (dataset() / "manifest.txt").string();
    const auto a = cli({"train", "--config", cfg, "--manifest", manifest, "--out", (dir / "a").string()});
    const auto b = cli({"train", "--config", cfg, "--manifest", manifest, "--out", (dir / "b").string()});
    REQUIRE(a.code == kExitOk);
    REQUIRE(b.code == kExitOk);
    const auto log = slurp(dir / "a" / "train.log");
    CHECK(std::count(log.begin(), log.end(), '\n') == 3);
    CHECK(log == slurp(dir / "b" / "train.log"));
    CHECK(slurp(dir / "a" / "model.ckpt") == slurp(dir / "b" / "model.ckpt"));
    CHECK(slurp(dir / "a" / "config.txt").find("seed=4") != std::string::npos);
    CHECK(fs::exists(dir / "a" / "timing.log"));

    const auto other = cli({"train", "--config", cfg, "--manifest", manifest, "--out", (dir / "c").string(), "--seed", "5"});
    REQUIRE(other.code == kExitOk);
    CHECK(slurp(dir / "c" / "train.log") != log);

    const auto ckpt = (dir / "a" / "model.ckpt").string();
    const auto s1 = cli({"score", "--checkpoint", ckpt, "--manifest", manifest, "--video", "c00_l1"});
    const auto s2 = cli({"score", "--checkpoint", ckpt, "--manifest", manifest, "--video", "c00_l1"});
    REQUIRE(s1.code == kExitOk);
    CHECK(s1.out == s2.out);
    const auto dot = s1.out.find('.');
    REQUIRE(dot != std::string::npos);
    CHECK(s1.out.size() - dot - 2 == 6);
    CHECK(cli({"score", "--checkpoint", ckpt, "--manifest", manifest, "--video", "nope"}).code == kExitConfig);
}

TEST_CASE("score reports the head bias for a zero checkpoint and rejects short videos") {
    const auto dir = scratch("score");
    const auto ckpt = zero_checkpoint(dir).string();
    const auto manifest = (dataset() / "manifest.txt").string();
    const auto r = cli({"score", "--checkpoint", ckpt, "--manifest", manifest, "--video", "c01_l2"});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out == "0.625000\n");

    Image frame{16, 32, std::vector<std::uint8_t>(16 * 32 * 3, 90)};
    write_raw_video(dir / "short.odv", std::vector<Image>(4, frame));
    const auto s = cli({"score", "--checkpoint", ckpt, "--video", (dir / "short.odv").string()});
    CHECK(s.code == kExitBounds);
    CHECK(s.err.find("frames") != std::string::npos);
    CHECK(cli({"score", "--video", (dir / "short.odv").string()}).code == kExitConfig);
}

TEST_CASE("evaluate writes a report and one scatter line per video") {
    const auto dir = scratch("evaluate");
    const auto ckpt = zero_checkpoint(dir).string();
    const auto manifest = (dataset() / "manifest.txt").string();
    const auto all = cli({"evaluate", "--checkpoint", ckpt, "--manifest", manifest, "--out", (dir / "all").string()});
    REQUIRE(all.code == kExitOk);
    const auto scatter = slurp(dir / "all" / "scatter.txt");
    CHECK(std::count(scatter.begin(), scatter.end(), '\n') == 6);
    // constant predictions leave every correlation undefined
    CHECK(slurp(dir / "all" / "report.txt").find("plcc: undefined") != std::string::npos);

    DatasetManifest m = load_manifest(manifest);
    m.videos.resize(1);
    const auto single_manifest = dataset() / "one.txt";
    save_manifest(single_manifest, m);
    const auto single = cli({"evaluate", "--checkpoint", ckpt, "--manifest", single_manifest.string(), "--out", (dir / "one").string()});
    REQUIRE(single.code == kExitOk);
    const auto report = slurp(dir / "one" / "report.txt");
    for (const char* key : {"plcc: undefined", "srocc: undefined", "krocc: undefined", "rmse:", "mae:"})
        CHECK(report.find(key) != std::string::npos);
    const auto one_scatter = slurp(dir / "one" / "scatter.txt");
    CHECK(std::count(one_scatter.begin(), one_scatter.end(), '\n') == 1);

    const auto test_only = cli({"evaluate", "--checkpoint", ckpt, "--manifest", manifest, "--split", "test", "--out", (dir / "t").string()});
    REQUIRE(test_only.code == kExitOk);
    const auto test_scatter = slurp(dir / "t" / "scatter.txt");
    CHECK(std::count(test_scatter.begin(), test_scatter.end(), '\n') == 3);
}

TEST_CASE("gradcheck passes a scope and fails under an injected fault") {
    const auto ok = cli({"gradcheck", "--scope", "attention"});
    CHECK(ok.code == kExitOk);
    CHECK(ok.out.find("gradcheck passed") != std::string::npos);
    CHECK(ok.out.find("FAIL") == std::string::npos);
    const auto bad = cli({"gradcheck", "--scope", "attention", "--inject-fault"});
    CHECK(bad.code == kExitFailure);
    CHECK(bad.out.find("FAIL ") != std::string::npos);
    CHECK(cli({"gradcheck", "--scope", "nonsense"}).code == kExitConfig);
}

TEST_CASE("synth validates its configuration") {
    const auto dir = scratch("synth");
    std::ofstream(dir / "one_level.txt") << "levels=1\n";
    const auto r = cli({"synth", "--config", (dir / "one_level.txt").string(), "--out", (dir / "o").string()});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("levels") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "o"));
    CHECK(cli({"synth"}).code == kExitConfig);
}
