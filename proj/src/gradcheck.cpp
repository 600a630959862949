#include "odvqa/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>

#include "odvqa/model.hpp"

namespace odvqa {
namespace {

using D = double;
using Vars = std::vector<Var<D>>;

Tensor<D> uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<D> t(shape);
    for (auto& v : t.storage()) v = dist(rng);
    return t;
}

long double projected(const Tensor<D>& y, const Tensor<D>& r) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<long double>(y[i]) * r[i];
    return s;
}

long double evaluate(const GradFunction& f, const std::vector<Tensor<D>>& inputs, const Tensor<D>& r) {
    Tape<D> tape(false);
    Vars vars;
    for (const auto& x : inputs) vars.push_back(tape.constant(x));
    return projected(f(tape, vars).value(), r);
}

std::vector<std::size_t> probe_indices(std::size_t size, std::size_t count, std::mt19937_64& rng) {
    std::vector<std::size_t> idx;
    if (size <= count) {
        for (std::size_t i = 0; i < size; ++i) idx.push_back(i);
        return idx;
    }
    std::uniform_int_distribution<std::size_t> dist(0, size - 1);
    while (idx.size() < count) {
        const std::size_t i = dist(rng);
        if (std::find(idx.begin(), idx.end(), i) == idx.end()) idx.push_back(i);
    }
    return idx;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6e", v);
    return buf;
}

// Weights keep their fan-in scale; other trainables move off their neutral
// values so that every gradient is checked in general position.
void randomize(ParameterStore<D>& store, std::uint64_t seed) {
    initialize_parameters(store, seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    for (auto& p : store.all()) {
        const bool weight = p.name.size() >= 7 && p.name.compare(p.name.size() - 7, 7, ".weight") == 0;
        if (!p.trainable || weight) continue;
        for (auto& v : p.value.storage()) v += dist(rng);
    }
}

}  // namespace

GradCheckResult gradcheck(const std::string& name, std::vector<Tensor<D>> inputs, ParameterStore<D>* store,
                          const GradFunction& f, const GradCheckOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(opt.seed);
    GradCheckResult res;
    res.name = name;

    Tape<D> tape(true);
    Vars vars;
    for (const auto& x : inputs) vars.push_back(tape.leaf(x));
    const Var<D> y = f(tape, vars);
    const Tensor<D> r = uniform(y.shape(), rng);
    if (store) store->zero_grad();
    tape.backward(y, r);
    for (std::size_t i = 0; i < r.size(); ++i) res.loss_scale += std::fabs(r[i] * y.value()[i]);
    const double floor = std::max(opt.guard, opt.roundoff_floor * res.loss_scale);

    // Fingerprint of the active sets at the unperturbed point.
    debug::set_kink_tracking(true);
    evaluate(f, inputs, r);
    const std::uint64_t base = debug::kink_fingerprint();
    debug::set_kink_tracking(false);
    const auto eval_tracked = [&](std::uint64_t& fp) {
        debug::set_kink_tracking(true);
        const long double v = evaluate(f, inputs, r);
        fp = debug::kink_fingerprint();
        debug::set_kink_tracking(false);
        return v;
    };

    // Central difference at step h, or nothing if +-h changes an active set.
    const auto central = [&](Tensor<D>& target, std::size_t i, double h) -> std::optional<double> {
        const D saved = target[i];
        std::uint64_t fu = 0, fd = 0;
        target[i] = saved + h;
        const long double up = eval_tracked(fu);
        target[i] = saved - h;
        const long double down = eval_tracked(fd);
        target[i] = saved;
        if (fu != base || fd != base) return std::nullopt;
        return static_cast<double>((up - down) / (2.0L * h));
    };

    const auto probe = [&](const std::string& label, Tensor<D>& target, const Tensor<D>* analytic) {
        for (std::size_t i : probe_indices(target.size(), opt.probes_per_tensor, rng)) {
            double h = opt.step;
            std::optional<double> numeric;
            for (int attempt = 0; attempt <= opt.kink_retries && !numeric; ++attempt, h *= 0.1) numeric = central(target, i, h);
            if (!numeric) {
                ++res.kink_skipped;
                continue;
            }
            const double a = analytic ? (*analytic)[i] : 0.0;
            const auto rel = [&](double n) { return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), floor}); };
            double err = rel(*numeric);
            std::string note;
            if (err >= opt.tolerance && std::max(std::fabs(a), std::fabs(*numeric)) < opt.small_gradient * res.loss_scale) {
                if (const auto wide = central(target, i, opt.step * opt.roundoff_step_factor)) {
                    ++res.roundoff_retried;
                    note = " (step " + fmt(opt.step * opt.roundoff_step_factor) + ")";
                    numeric = wide;
                    err = rel(*wide);
                }
            }
            ++res.probes;
            if (err > res.max_rel_error || res.worst.empty()) {
                res.max_rel_error = err;
                res.worst = label + "[" + std::to_string(i) + "] analytic " + fmt(a) + " numeric " + fmt(*numeric) + note;
            }
        }
    };
    for (std::size_t k = 0; k < inputs.size(); ++k) probe("input" + std::to_string(k), inputs[k], tape.grad(vars[k]));
    if (store)
        for (auto& p : store->all())
            if (p.trainable) probe(p.name, p.value, &p.grad);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

namespace {

struct CaseBuilder {
    std::vector<GradCase> cases;
    std::string scope;

    void add(const std::string& name, std::function<GradCheckResult(const GradCheckOptions&)> run) {
        cases.push_back({scope, name, [scope = scope, run](const GradCheckOptions& o) {
                             GradCheckResult r = run(o);
                             r.scope = scope;
                             return r;
                         }});
    }

    // A case over plain inputs with no parameters.
    void op(const std::string& name, std::vector<Shape> shapes, GradFunction f) {
        add(name, [name, shapes, f](const GradCheckOptions& o) {
            std::mt19937_64 rng(o.seed + 1);
            std::vector<Tensor<D>> in;
            for (const auto& s : shapes) in.push_back(uniform(s, rng));
            GradCheckOptions all = o;
            all.probes_per_tensor = 64;
            return gradcheck(name, std::move(in), nullptr, f, all);
        });
    }

    // A block built into its own store; `make` returns the forward function.
    template <typename Make>
    void block(const std::string& name, std::vector<Shape> shapes, Make make) {
        add(name, [name, shapes, make](const GradCheckOptions& o) {
            auto store = std::make_shared<ParameterStore<D>>();
            GradFunction f = make(*store);
            randomize(*store, o.seed + 2);
            std::mt19937_64 rng(o.seed + 3);
            std::vector<Tensor<D>> in;
            for (const auto& s : shapes) in.push_back(uniform(s, rng));
            return gradcheck(name, std::move(in), store.get(), f, o);
        });
    }
};

Context<D> train_ctx(Tape<D>& t, GridKind grid = GridKind::spherical) { return Context<D>{t, BnMode::train, grid}; }

ModelConfig desk_model() {
    ModelConfig m;
    m.channels = 8;
    m.reduction = 4;
    return m;
}

void tensor_cases(CaseBuilder& b) {
    b.op("add_broadcast", {{2, 3, 4}, {2, 1, 4}}, [](Tape<D>&, const Vars& v) { return add(v[0], v[1]); });
    b.op("sub_broadcast", {{2, 3, 4}, {1, 3, 1}}, [](Tape<D>&, const Vars& v) { return sub(v[0], v[1]); });
    b.op("mul_broadcast", {{2, 3, 4}, {2, 3, 1}}, [](Tape<D>&, const Vars& v) { return mul(v[0], v[1]); });
    b.op("scale", {{3, 5}}, [](Tape<D>&, const Vars& v) { return scale(v[0], 2.5); });
    b.op("relu", {{4, 6}}, [](Tape<D>&, const Vars& v) { return relu(v[0]); });
    b.op("sigmoid", {{4, 6}}, [](Tape<D>&, const Vars& v) { return sigmoid(v[0]); });
    b.op("sum", {{3, 4}}, [](Tape<D>&, const Vars& v) { return sum(v[0]); });
    b.op("mean", {{3, 4}}, [](Tape<D>&, const Vars& v) { return mean(v[0]); });
    b.op("reduce_mean", {{2, 3, 4}}, [](Tape<D>&, const Vars& v) { return reduce_mean(v[0], 1); });
    b.op("reduce_max", {{2, 3, 4}}, [](Tape<D>&, const Vars& v) { return reduce_max(v[0], 2); });
    b.op("global_average_pool", {{2, 3, 4, 5}}, [](Tape<D>&, const Vars& v) { return global_average_pool(v[0], 2); });
    b.op("reshape_permute", {{2, 3, 4}}, [](Tape<D>&, const Vars& v) {
        return mul(permute(reshape(v[0], {6, 4}), {1, 0}), permute(reshape(v[0], {6, 4}), {1, 0}));
    });
    b.op("concat", {{2, 3, 4}, {2, 2, 4}}, [](Tape<D>&, const Vars& v) { return concat<D>({v[0], v[1], v[0]}, 1); });
    b.op("slice", {{3, 5, 2}}, [](Tape<D>&, const Vars& v) { return slice(v[0], 1, 1, 4); });
    b.op("softmax", {{2, 3, 4}}, [](Tape<D>&, const Vars& v) { return softmax(v[0], 1); });
    b.op("linear", {{2, 3, 5}, {4, 5}, {4}}, [](Tape<D>&, const Vars& v) { return linear(v[0], v[1], v[2]); });
    b.op("conv1x1", {{2, 3, 4, 5}, {4, 3}, {4}}, [](Tape<D>&, const Vars& v) { return conv1x1(v[0], v[1], v[2]); });
    for (GridKind kind : {GridKind::spherical, GridKind::regular})
        for (std::size_t stride : {1, 2}) {
            const std::string name = std::string("conv2d_") + (kind == GridKind::spherical ? "spherical" : "regular") +
                                     "_stride" + std::to_string(stride);
            b.op(name, {{2, 3, 8, 16}, {4, 3, 3, 3}, {4}}, [kind, stride](Tape<D>&, const Vars& v) {
                return conv2d_sampled(v[0], v[1], v[2], sampling_grid(kind, 8, 16, 3, stride));
            });
        }
    b.op("conv2d_k7", {{1, 2, 8, 16}, {1, 2, 7, 7}, {1}}, [](Tape<D>&, const Vars& v) {
        return conv2d_sampled(v[0], v[1], v[2], sampling_grid(GridKind::spherical, 8, 16, 7, 1));
    });
    b.op("conv3d", {{2, 3, 4, 4, 5}, {2, 3, 3, 3, 3}, {2}}, [](Tape<D>&, const Vars& v) {
        return conv3d(v[0], v[1], v[2]);
    });
    b.op("matmul_batched", {{2, 3, 4}, {2, 4, 5}}, [](Tape<D>&, const Vars& v) { return matmul_batched(v[0], v[1]); });
    b.op("resize_down2", {{2, 2, 4, 6}}, [](Tape<D>&, const Vars& v) { return resize(v[0], Resize::down2); });
    b.op("resize_up2", {{2, 2, 3, 4}}, [](Tape<D>&, const Vars& v) { return resize(v[0], Resize::up2); });
    b.op("pool3d_max", {{2, 2, 4, 4, 6}}, [](Tape<D>&, const Vars& v) {
        return pool3d(v[0], {2, 2, 2}, {2, 2, 2}, PoolKind::max);
    });
    b.op("pool3d_avg_clipped", {{1, 2, 3, 5, 5}}, [](Tape<D>&, const Vars& v) {
        return pool3d(v[0], {2, 2, 2}, {2, 2, 2}, PoolKind::avg);
    });
    b.op("complementary_pool", {{1, 2, 4, 4, 4}}, [](Tape<D>&, const Vars& v) { return complementary_pool(v[0]); });
    for (BnMode mode : {BnMode::train, BnMode::infer}) {
        const std::string name = mode == BnMode::train ? "batch_norm_train" : "batch_norm_infer";
        b.op(name, {{3, 2, 4, 5}, {2}, {2}}, [mode](Tape<D>&, const Vars& v) {
            Parameter<D> rm{"rm", Tensor<D>(Shape{2}, std::vector<D>{0.1, -0.2}), Tensor<D>(Shape{2}), false};
            Parameter<D> rv{"rv", Tensor<D>(Shape{2}, std::vector<D>{0.7, 1.3}), Tensor<D>(Shape{2}), false};
            return batch_norm(v[0], v[1], v[2], rm, rv, mode);
        });
    }
    b.op("mse_loss", {{5}}, [](Tape<D>&, const Vars& v) {
        return mse_loss(v[0], Tensor<D>(Shape{5}, std::vector<D>{0.1, 0.5, -0.3, 0.9, 0.0}));
    });
}

void attention_cases(CaseBuilder& b) {
    b.block("spatial_attention", {{2, 4, 8, 16}}, [](ParameterStore<D>& s) {
        auto sa = std::make_shared<SpatialAttention<D>>(s, "sa");
        return GradFunction([sa](Tape<D>& t, const Vars& v) {
            auto ctx = train_ctx(t);
            return (*sa)(ctx, v[0]);
        });
    });
    b.block("channel_attention", {{2, 8, 4, 8}}, [](ParameterStore<D>& s) {
        auto ca = std::make_shared<ChannelAttention<D>>(s, "ca", 8, 4);
        return GradFunction([ca](Tape<D>& t, const Vars& v) {
            auto ctx = train_ctx(t);
            return (*ca)(ctx, v[0]);
        });
    });
    for (bool sa : {true, false})
        for (GridKind grid : {GridKind::spherical, GridKind::regular}) {
            const std::string name = std::string("rsp_block") + (sa ? "" : "_no_attention") +
                                     (grid == GridKind::spherical ? "" : "_regular");
            b.block(name, {{2, 4, 8, 16}}, [sa, grid](ParameterStore<D>& s) {
                auto blk = std::make_shared<RspBlock<D>>(s, "rsp", 4, sa);
                return GradFunction([blk, grid](Tape<D>& t, const Vars& v) {
                    auto ctx = train_ctx(t, grid);
                    return (*blk)(ctx, v[0]);
                });
            });
        }
}

void spaq_cases(CaseBuilder& b) {
    b.block("asfe_levels", {{2, 3, 32, 64}}, [](ParameterStore<D>& s) {
        auto sp = std::make_shared<Spaq<D>>(s, desk_model());
        return GradFunction([sp](Tape<D>& t, const Vars& v) {
            auto ctx = train_ctx(t);
            const auto m = sp->extract(ctx, v[0]);
            const auto flat = [](const Var<D>& x) { return reshape(x, {numel(x.shape())}); };
            return concat<D>({flat(m.ll), flat(m.ml), flat(m.hl)}, 0);
        });
    });
    for (SfiMode mode : {SfiMode::selective, SfiMode::sum, SfiMode::sum_ca, SfiMode::concat, SfiMode::concat_ca}) {
        b.block("sfi_" + to_string(mode), {{2, 8, 4, 8}, {2, 8, 4, 8}, {2, 8, 4, 8}}, [mode](ParameterStore<D>& s) {
            ModelConfig m = desk_model();
            m.sfi_mode = mode;
            m.stage_blocks = {1, 1, 1};
            auto sp = std::make_shared<Spaq<D>>(s, m);
            return GradFunction([sp](Tape<D>& t, const Vars& v) {
                auto ctx = train_ctx(t);
                return sp->integrate(ctx, {v[0], v[1], v[2]}).p;
            });
        });
    }
    b.block("spaq_full", {{2, 3, 32, 64}}, [](ParameterStore<D>& s) {
        auto sp = std::make_shared<Spaq<D>>(s, desk_model());
        return GradFunction([sp](Tape<D>& t, const Vars& v) {
            auto ctx = train_ctx(t);
            return sp->forward(ctx, v[0]);
        });
    });
}

void mpaq_cases(CaseBuilder& b) {
    b.block("mpaq", {{2, 8, 4, 8}, {2, 8, 4, 8}, {2, 8, 4, 8}}, [](ParameterStore<D>& s) {
        auto mp = std::make_shared<Mpaq<D>>(s, desk_model());
        return GradFunction([mp](Tape<D>& t, const Vars& v) {
            auto ctx = train_ctx(t);
            return mp->forward(ctx, v[0], v[1], v[2]);
        });
    });
}

void temporal_cases(CaseBuilder& b) {
    for (bool normalize : {false, true})
        for (std::size_t clips : {4, 1}) {
            const std::string name = std::string("mftn") + (normalize ? "_normalized" : "") + "_s" + std::to_string(clips);
            b.block(name, {{2, clips, 4, 8, 8}}, [normalize](ParameterStore<D>& s) {
                ModelConfig m = desk_model();
                m.normalize_similarity = normalize;
                auto mf = std::make_shared<Mftn<D>>(s, m);
                return GradFunction([mf](Tape<D>& t, const Vars& v) {
                    auto ctx = train_ctx(t);
                    return mf->forward(ctx, v[0]).out;
                });
            });
        }
    b.block("aqr", {{2, 4, 8, 16, 8}}, [](ParameterStore<D>& s) {
        auto aq = std::make_shared<Aqr<D>>(s, 8);
        return GradFunction([aq](Tape<D>& t, const Vars& v) {
            auto ctx = train_ctx(t);
            return aq->forward(ctx, v[0]);
        });
    });
    b.block("head", {{2, 4, 8, 16, 8}}, [](ParameterStore<D>& s) {
        auto mf = std::make_shared<Mftn<D>>(s, desk_model());
        auto aq = std::make_shared<Aqr<D>>(s, 8);
        return GradFunction([mf, aq](Tape<D>& t, const Vars& v) {
            auto ctx = train_ctx(t);
            return aq->forward(ctx, mf->forward(ctx, v[0]).out);
        });
    });
}

void model_case(CaseBuilder& b, const std::string& name, ModelConfig cfg, std::size_t clips, std::size_t h,
                std::size_t w, std::size_t probes) {
    b.add(name, [=](const GradCheckOptions& o) {
        auto model = std::make_shared<Model<D>>(cfg);
        randomize(model->parameters(), o.seed + 4);
        std::mt19937_64 rng(o.seed + 5);
        ClipBatch<D> batch{uniform({3, 2 * clips, 3, h, w}, rng, 0.0, 1.0), 2, clips};
        GradCheckOptions opt = o;
        opt.probes_per_tensor = probes;
        return gradcheck(name, {}, &model->parameters(),
                         [model, batch](Tape<D>& t, const Vars&) { return model->forward(t, batch, BnMode::train); },
                         opt);
    });
}

void model_cases(CaseBuilder& b) { model_case(b, "model_end_to_end", desk_model(), 2, 32, 64, 1); }

void ablation_cases(CaseBuilder& b) {
    ModelConfig base = desk_model();
    base.stage_blocks = {1, 1, 1};
    const auto with = [&](auto edit) {
        ModelConfig m = base;
        edit(m);
        return m;
    };
    model_case(b, "backbone_standard", with([](ModelConfig& m) { m.backbone = Backbone::standard; }), 2, 16, 32, 1);
    model_case(b, "no_long_skip", with([](ModelConfig& m) { m.long_skip = false; }), 2, 16, 32, 1);
    model_case(b, "no_spatial_attention", with([](ModelConfig& m) { m.spatial_attention = false; }), 2, 16, 32, 1);
    for (SfiMode mode : {SfiMode::sum, SfiMode::sum_ca, SfiMode::concat, SfiMode::concat_ca})
        model_case(b, "sfi_" + to_string(mode), with([mode](ModelConfig& m) { m.sfi_mode = mode; }), 2, 16, 32, 1);
    model_case(b, "mpaq_off", with([](ModelConfig& m) { m.mpaq_enabled = false; }), 2, 16, 32, 1);
    model_case(b, "mftn_off", with([](ModelConfig& m) { m.mftn_mode = MftnMode::off; }), 2, 16, 32, 1);
    for (std::size_t s : {1, 2, 3, 5, 6}) model_case(b, "clips_" + std::to_string(s), base, s, 16, 32, 1);
}

}  // namespace

std::vector<std::string> gradcheck_scopes() { return {"tensor", "attention", "spaq", "mpaq", "temporal", "model", "ablation"}; }

std::vector<GradCase> gradcheck_cases(const std::string& scope) {
    const auto scopes = gradcheck_scopes();
    if (scope != "all" && std::find(scopes.begin(), scopes.end(), scope) == scopes.end())
        throw std::invalid_argument("gradcheck: unknown scope '" + scope + "'");
    CaseBuilder b;
    const std::pair<const char*, void (*)(CaseBuilder&)> table[] = {
        {"tensor", tensor_cases}, {"attention", attention_cases}, {"spaq", spaq_cases},   {"mpaq", mpaq_cases},
        {"temporal", temporal_cases}, {"model", model_cases},     {"ablation", ablation_cases}};
    for (const auto& [name, fill] : table) {
        if (scope != "all" && scope != name) continue;
        b.scope = name;
        fill(b);
    }
    return b.cases;
}

}  // namespace odvqa
