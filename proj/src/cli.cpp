#include "odvqa/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "odvqa/checkpoint.hpp"
#include "odvqa/config.hpp"
#include "odvqa/data.hpp"
#include "odvqa/gradcheck.hpp"
#include "odvqa/metrics.hpp"
#include "odvqa/model.hpp"
#include "odvqa/ops.hpp"
#include "odvqa/training.hpp"

namespace odvqa {
namespace {

namespace fs = std::filesystem;

struct Flags {
    std::string config, checkpoint, manifest, out, video, scope = "all", split = "all";
    std::uint64_t seed = 0;
    int precision = 32;
    bool inject_fault = false;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* precision_opt = nullptr;
};

// A run configuration file: training keys plus manifest, checkpoint and out.
// Relative paths in the file resolve against the file's directory.
struct RunConfig {
    TrainConfig train;
    fs::path manifest, checkpoint, out;
};

fs::path resolve_from(const fs::path& base, const std::string& value) {
    const fs::path p(value);
    return p.is_absolute() ? p : base / p;
}

RunConfig load_run_config(const Flags& f) {
    RunConfig rc;
    if (!f.config.empty()) {
        const fs::path base = fs::path(f.config).parent_path();
        for (const auto& e : KeyValues::load(f.config).entries) {
            if (e.key == "manifest") rc.manifest = resolve_from(base, e.value);
            else if (e.key == "checkpoint") rc.checkpoint = e.value;
            else if (e.key == "out") rc.out = resolve_from(base, e.value);
            else if (!apply_train_key(rc.train, e.key, e.value))
                throw ConfigError(e.key, "config line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
        }
    }
    if (!f.manifest.empty()) rc.manifest = f.manifest;
    if (!f.out.empty()) rc.out = f.out;
    if (!f.checkpoint.empty()) rc.checkpoint = f.checkpoint;
    if (f.seed_opt && f.seed_opt->count()) rc.train.seed = f.seed;
    if (f.precision_opt && f.precision_opt->count()) rc.train.precision = f.precision == 64 ? Precision::f64 : Precision::f32;
    rc.train.validate();
    return rc;
}

std::string run_config_text(const RunConfig& rc) {
    std::string s = to_text(rc.train);
    s += "manifest=" + rc.manifest.string() + "\n";
    s += "out=" + rc.out.string() + "\n";
    s += "checkpoint=" + rc.checkpoint.string() + "\n";
    return s;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw std::runtime_error("cannot write " + path.string());
}

void require_key(const fs::path& value, const std::string& key) {
    if (value.empty()) throw ConfigError(key, key + ": required (set it in --config or pass --" + key + ")");
}

// Everything train needs is checked here, before any file is written.
void validate_training_data(const DatasetManifest& m, const TrainConfig& cfg) {
    const auto videos = m.select(Split::train);
    if (videos.empty()) throw DataError("manifest: no videos in the train split");
    for (const VideoEntry* v : videos) {
        require_clip_bounds(*v, cfg.clips, cfg.frame_interval);
        require_frame_extents(v->height, v->width);
        if (!fs::exists(m.resolve(*v))) throw DataError("video '" + v->id + "': " + m.resolve(*v).string() + " not found");
    }
}

template <typename T>
int train_as(const RunConfig& rc, const DatasetManifest& manifest, const fs::path& ckpt, std::ostream& out) {
    Model<T> model(rc.train.model);
    FrameCache cache(manifest);
    const std::string hash = hex64(fnv1a64(to_text(rc.train)));
    std::ofstream log(rc.out / "train.log", std::ios::binary), timing(rc.out / "timing.log", std::ios::binary);
    const std::size_t every = std::max<std::size_t>(1, rc.train.iterations / 20);
    train_loop(model, manifest, rc.train, cache, [&](const TrainLogRecord& r) {
        log << format_log_line(r, hash) << '\n';
        timing << r.iteration << ' ' << std::fixed << std::setprecision(3) << r.wall_ms << '\n';
        if (r.iteration % every == 0 || r.iteration + 1 == rc.train.iterations) {
            out << format_log_line(r, hash) << '\n';
            out.flush();
        }
    });
    log.flush();
    if (!log || !timing) throw std::runtime_error("cannot write training logs under " + rc.out.string());
    write_checkpoint(ckpt, snapshot(model.parameters(), to_text(rc.train)));
    out << "checkpoint " << ckpt.string() << '\n';
    return kExitOk;
}

int cmd_train(const Flags& f, std::ostream& out) {
    RunConfig rc = load_run_config(f);
    require_key(rc.manifest, "manifest");
    require_key(rc.out, "out");
    if (rc.checkpoint.empty()) rc.checkpoint = "model.ckpt";
    if (rc.checkpoint.is_absolute())
        throw ConfigError("checkpoint", "checkpoint: train writes under --out, give a path relative to it");
    const fs::path ckpt = rc.out / rc.checkpoint;
    const DatasetManifest manifest = load_manifest(rc.manifest);
    validate_training_data(manifest, rc.train);

    fs::create_directories(ckpt.parent_path());
    const std::string effective = run_config_text(rc);
    write_text(rc.out / "config.txt", effective);
    out << effective;
    return rc.train.precision == Precision::f64 ? train_as<double>(rc, manifest, ckpt, out)
                                                : train_as<float>(rc, manifest, ckpt, out);
}

struct LoadedModel {
    TrainConfig cfg;
    Checkpoint ckpt;
};

LoadedModel load_model_checkpoint(const Flags& f) {
    require_key(f.checkpoint, "checkpoint");
    LoadedModel lm;
    lm.ckpt = read_checkpoint(f.checkpoint);
    lm.cfg = train_config_from_text(lm.ckpt.header);
    if (f.precision_opt && f.precision_opt->count()) lm.cfg.precision = f.precision == 64 ? Precision::f64 : Precision::f32;
    return lm;
}

template <typename T>
std::vector<double> score_all(const LoadedModel& lm, const DatasetManifest& m, const std::vector<const VideoEntry*>& videos) {
    Model<T> model(lm.cfg.model);
    restore(model.parameters(), lm.ckpt);
    FrameCache cache(m);
    std::vector<double> scores;
    for (const VideoEntry* v : videos) scores.push_back(score_video(model, cache, *v, lm.cfg.clips, lm.cfg.frame_interval));
    return scores;
}

std::vector<double> score_videos(const LoadedModel& lm, const DatasetManifest& m,
                                 const std::vector<const VideoEntry*>& videos) {
    for (const VideoEntry* v : videos) {
        require_clip_bounds(*v, lm.cfg.clips, lm.cfg.frame_interval);
        require_frame_extents(v->height, v->width);
    }
    return lm.cfg.precision == Precision::f64 ? score_all<double>(lm, m, videos) : score_all<float>(lm, m, videos);
}

int cmd_score(const Flags& f, std::ostream& out) {
    const LoadedModel lm = load_model_checkpoint(f);
    if (f.video.empty()) throw ConfigError("video", "video: required (a manifest id with --manifest, or a video path)");
    DatasetManifest m;
    if (!f.manifest.empty()) {
        m = load_manifest(f.manifest);
        const auto it = std::find_if(m.videos.begin(), m.videos.end(), [&](const VideoEntry& e) { return e.id == f.video; });
        if (it == m.videos.end()) throw DataError("manifest: no video with id '" + f.video + "'");
        const VideoEntry only = *it;
        m.videos = {only};
    } else {
        m = probe_video(f.video);
    }
    const double s = score_videos(lm, m, {&m.videos.front()}).front();
    out << std::fixed << std::setprecision(6) << s << '\n';
    return kExitOk;
}

int cmd_evaluate(const Flags& f, std::ostream& out) {
    const LoadedModel lm = load_model_checkpoint(f);
    require_key(f.manifest, "manifest");
    require_key(f.out, "out");
    const DatasetManifest m = load_manifest(f.manifest);
    std::optional<Split> split;
    if (f.split == "train") split = Split::train;
    else if (f.split == "test") split = Split::test;
    const auto videos = m.select(split);
    if (videos.empty()) throw DataError("manifest: no videos in split '" + f.split + "'");

    const std::vector<double> raw = score_videos(lm, m, videos);
    std::vector<std::string> ids;
    std::vector<double> pred, truth;
    for (std::size_t i = 0; i < videos.size(); ++i) {
        ids.push_back(videos[i]->id);
        pred.push_back(100.0 * raw[i]);  // back to the 0..100 subjective scale
        truth.push_back(videos[i]->score);
    }
    const MetricReport report = evaluate_predictions(ids, pred, truth);
    fs::create_directories(f.out);
    write_text(fs::path(f.out) / "report.txt", report.to_text());
    write_text(fs::path(f.out) / "scatter.txt", report.scatter_text());
    out << report.to_text();
    return kExitOk;
}

int cmd_gradcheck(const Flags& f, std::ostream& out) {
    const auto cases = gradcheck_cases(f.scope);
    GradCheckOptions opt;
    if (f.seed_opt && f.seed_opt->count()) opt.seed = f.seed;
    debug::set_relu_gradient_fault(f.inject_fault);
    bool ok = true;
    double worst = 0.0;
    for (const auto& c : cases) {
        const GradCheckResult r = c.run(opt);
        const bool pass = r.passed(opt.tolerance);
        ok = ok && pass;
        worst = std::max(worst, r.max_rel_error);
        out << (pass ? "PASS " : "FAIL ") << r.scope << '/' << r.name << " max_rel_error=" << std::scientific
            << std::setprecision(3) << r.max_rel_error << " probes=" << r.probes << " kink_skipped=" << r.kink_skipped
            << " roundoff_retried=" << r.roundoff_retried
            << " worst: " << r.worst << '\n';
        out.flush();
    }
    debug::set_relu_gradient_fault(false);
    out << (ok ? "gradcheck passed" : "gradcheck FAILED") << ": " << cases.size() << " blocks, worst relative error "
        << std::scientific << std::setprecision(3) << worst << " (tolerance " << opt.tolerance << ")\n";
    return ok ? kExitOk : kExitFailure;
}

int cmd_synth(const Flags& f, std::ostream& out) {
    SynthConfig cfg;
    if (!f.config.empty())
        for (const auto& e : KeyValues::load(f.config).entries)
            if (!apply_synth_key(cfg, e.key, e.value))
                throw ConfigError(e.key, "config line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    if (f.seed_opt && f.seed_opt->count()) cfg.seed = f.seed;
    cfg.validate();
    require_key(f.out, "out");
    const DatasetManifest m = synth_generate(cfg, f.out);
    write_text(fs::path(f.out) / "synth_config.txt", to_text(cfg));
    out << to_text(cfg) << "wrote " << m.videos.size() << " videos to " << f.out << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Blind quality assessment for 360-degree video", "odvqa"};
    app.require_subcommand(1);
    Flags f;
    const auto common = [&f](CLI::App* sub, bool config, bool checkpoint, bool manifest, bool outdir, bool seed) {
        if (config) sub->add_option("--config", f.config, "flat key=value configuration file");
        if (checkpoint) sub->add_option("--checkpoint", f.checkpoint, "checkpoint file");
        if (manifest) sub->add_option("--manifest", f.manifest, "dataset manifest");
        if (outdir) sub->add_option("--out", f.out, "output directory; nothing is written elsewhere");
        if (seed) f.seed_opt = sub->add_option("--seed", f.seed, "overrides the configured seed");
    };
    CLI::App* train = app.add_subcommand("train", "train a model on a manifest's train split");
    common(train, true, true, true, true, true);
    f.precision_opt = train->add_option("--precision", f.precision, "32 or 64")->check(CLI::IsMember({32, 64}));

    CLI::App* score = app.add_subcommand("score", "print the predicted score of one video");
    common(score, false, true, true, false, false);
    score->add_option("--video", f.video, "manifest id (with --manifest) or raw video file / PPM frame directory");
    auto* score_precision = score->add_option("--precision", f.precision, "32 or 64")->check(CLI::IsMember({32, 64}));

    CLI::App* evaluate = app.add_subcommand("evaluate", "score a manifest and write metric reports");
    common(evaluate, false, true, true, true, false);
    evaluate->add_option("--split", f.split, "all, train or test")->check(CLI::IsMember({"all", "train", "test"}));
    auto* eval_precision = evaluate->add_option("--precision", f.precision, "32 or 64")->check(CLI::IsMember({32, 64}));

    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite in 64-bit");
    grad->add_option("--scope", f.scope, "all or one of: tensor attention spaq mpaq temporal model ablation");
    auto* grad_seed = grad->add_option("--seed", f.seed, "probe and input seed");
    grad->add_flag("--inject-fault", f.inject_fault)->group("");

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic distortion dataset");
    common(synth, true, false, false, true, false);
    auto* synth_seed = synth->add_option("--seed", f.seed, "overrides the configured seed");

    std::vector<std::string> argv_store{"odvqa"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (score->parsed()) f.precision_opt = score_precision;
        if (evaluate->parsed()) f.precision_opt = eval_precision;
        if (grad->parsed()) f.seed_opt = grad_seed;
        if (synth->parsed()) f.seed_opt = synth_seed;
        if (train->parsed()) return cmd_train(f, out);
        if (score->parsed()) return cmd_score(f, out);
        if (evaluate->parsed()) return cmd_evaluate(f, out);
        if (grad->parsed()) return cmd_gradcheck(f, out);
        if (synth->parsed()) return cmd_synth(f, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const BoundsError& e) {
        err << "error: " << e.what() << '\n';
        return kExitBounds;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitConfig;
}

}  // namespace odvqa
