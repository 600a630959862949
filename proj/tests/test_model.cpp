#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "odvqa/model.hpp"
#include "oracles.hpp"

using namespace odvqa;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

ModelConfig desk(std::size_t channels = 8, std::size_t reduction = 4) {
    ModelConfig c;
    c.channels = channels;
    c.reduction = reduction;
    c.stage_blocks = {1, 1, 1};
    return c;
}

template <typename T>
void zero_all(ParameterStore<T>& store) {
    for (auto& p : store.all()) p.value.fill(T(0));
}

}  // namespace

TEST_CASE("spatial attention gate lies in (0, 1) and zero weights halve the input") {
    ParameterStore<double> store;
    SpatialAttention<double> sa(store, "sa");
    Tape<double> tape(false);
    Context<double> ctx{tape, BnMode::train, GridKind::spherical};
    const auto f = random_tensor({2, 4, 8, 16}, 1);
    CHECK(max_abs_diff(sa(ctx, tape.constant(f)).value(), [&] {
              auto h = f;
              for (auto& v : h.storage()) v *= 0.5;
              return h;
          }()) == 0.0);

    oracle::randomize(store, 2, 1.0);
    Tape<double> fresh(false);
    Context<double> fctx{fresh, BnMode::train, GridKind::spherical};
    const auto y = sa(fctx, fresh.constant(f)).value();
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double r = y[i] / f[i];
        CHECK(r > 0.0);
        CHECK(r < 1.0);
    }
    const auto gate = sa.gate(fctx, fresh.constant(Tensor<double>({1, 3, 8, 16}, 0.4))).value();
    for (std::size_t i = 0; i < 16; ++i) CHECK(gate.at(0, 0, 3, i) == doctest::Approx(gate.at(0, 0, 3, 0)).epsilon(1e-12));
}

TEST_CASE("channel attention matches the squeeze-excitation formula") {
    ParameterStore<double> store;
    ChannelAttention<double> ca(store, "ca", 8, 4);
    Tape<double> tape(false);
    Context<double> ctx{tape};
    const auto f = random_tensor({2, 8, 4, 6}, 3);
    for (double v : ca.gate(ctx, tape.constant(f)).value().storage()) CHECK(v == 0.5);
    oracle::randomize(store, 4, 1.0);
    Tape<double> fresh(false);
    Context<double> fctx{fresh};
    CHECK(max_abs_diff(ca(fctx, fresh.constant(f)).value(), oracle::channel_attention(f, store, "ca")) < 1e-14);
    CHECK_THROWS_AS(ChannelAttention<double>(store, "bad", 6, 4), std::invalid_argument);
}

TEST_CASE("RSP block with zero weights is the identity") {
    for (bool attention : {true, false}) {
        ParameterStore<double> store;
        RspBlock<double> block(store, "rsp", 4, attention);
        zero_all(store);
        Tape<double> tape(false);
        Context<double> ctx{tape};
        const auto x = random_tensor({2, 4, 8, 16}, 5);
        const auto y = block(ctx, tape.constant(x)).value();
        CHECK(y == x);
        CHECK_THROWS_AS(block(ctx, tape.constant(random_tensor({2, 3, 8, 16}, 5))), ShapeError);
    }
}

TEST_CASE("ASFE level extents and zero-weight outputs") {
    ModelConfig cfg = desk();
    ParameterStore<double> store;
    Spaq<double> spaq(store, cfg);
    Tape<double> tape(false);
    Context<double> ctx{tape};
    const auto frames = random_tensor({2, 3, 64, 128}, 6, 0.0, 1.0);
    initialize_parameters(store, 1);
    const auto m = spaq.extract(ctx, tape.constant(frames));
    CHECK(m.ll.shape() == Shape{2, 8, 32, 64});
    CHECK(m.ml.shape() == Shape{2, 8, 16, 32});
    CHECK(m.hl.shape() == Shape{2, 8, 8, 16});
    const auto r = spaq.rescale(ctx, m);
    for (const auto& v : r) CHECK(v.shape() == Shape{2, 8, 16, 32});

    zero_all(store);
    Tape<double> fresh(false);
    Context<double> fctx{fresh};
    const auto z = spaq.extract(fctx, fresh.constant(frames));
    for (const auto* v : {&z.ll, &z.ml, &z.hl})
        for (double e : v->value().storage()) CHECK(e == 0.0);
    CHECK_THROWS_AS(spaq.extract(ctx, tape.constant(random_tensor({2, 3, 20, 40}, 7))), ShapeError);
}

TEST_CASE("SFI matches the step-by-step oracle") {
    ModelConfig cfg = desk();
    ParameterStore<double> store;
    Spaq<double> spaq(store, cfg);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        oracle::randomize(store, 100 + seed, 1.0);
        std::array<Tensor<double>, 3> lv;
        std::array<Var<double>, 3> vars;
        Tape<double> tape(false);
        Context<double> ctx{tape};
        for (std::size_t l = 0; l < 3; ++l) {
            lv[l] = random_tensor({3, 8, 4, 8}, 10 * seed + l, -2.0, 2.0);
            vars[l] = tape.constant(lv[l]);
        }
        Tensor<double> weights;
        const auto expect = oracle::sfi(lv, store, "spaq", &weights);
        const auto got = spaq.integrate(ctx, vars);
        CHECK(max_abs_diff(got.p.value(), expect) < 1e-10);
        REQUIRE(got.state.has_value());
        CHECK(max_abs_diff(got.state->weights.value(), weights) < 1e-12);
    }
}

TEST_CASE("SFI weights form a per-channel partition of unity") {
    ModelConfig cfg = desk();
    ParameterStore<double> store;
    Spaq<double> spaq(store, cfg);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        oracle::randomize(store, seed, 3.0);
        Tape<double> tape(false);
        Context<double> ctx{tape};
        std::array<Var<double>, 3> vars;
        for (std::size_t l = 0; l < 3; ++l) vars[l] = tape.constant(random_tensor({1, 8, 2, 4}, 7 * seed + l, -5.0, 5.0));
        const auto w = spaq.integrate(ctx, vars).state->weights.value();
        for (std::size_t c = 0; c < 8; ++c) worst = std::max(worst, std::fabs(w.at(0, 0, c) + w.at(0, 1, c) + w.at(0, 2, c) - 1.0));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("SFI softmax symmetry and saturation") {
    ModelConfig cfg = desk();
    ParameterStore<double> store;
    Spaq<double> spaq(store, cfg);
    Tape<double> tape(false);
    Context<double> ctx{tape};
    std::array<Tensor<double>, 3> lv;
    std::array<Var<double>, 3> vars;
    for (std::size_t l = 0; l < 3; ++l) {
        lv[l] = random_tensor({2, 8, 4, 8}, 20 + l);
        vars[l] = tape.constant(lv[l]);
    }
    oracle::randomize(store, 9);
    for (const char* n : {"ll", "ml", "hl"}) store.find(std::string("spaq.sfi.expand_") + n + ".weight")->value.fill(0.0);
    for (const char* n : {"ll", "ml", "hl"}) store.find(std::string("spaq.sfi.expand_") + n + ".bias")->value.fill(0.3);
    auto p = spaq.integrate(ctx, vars).p.value();
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx((lv[0][i] + lv[1][i] + lv[2][i]) / 3.0).epsilon(1e-12));

    store.find("spaq.sfi.expand_ml.bias")->value.fill(50.0);
    Tape<double> fresh(false);
    Context<double> fctx{fresh};
    std::array<Var<double>, 3> again;
    for (std::size_t l = 0; l < 3; ++l) again[l] = fresh.constant(lv[l]);
    p = spaq.integrate(fctx, again).p.value();
    CHECK(max_abs_diff(p, lv[1]) < 1e-15);
}

TEST_CASE("SFI ablation modes keep the output extents") {
    for (SfiMode mode : {SfiMode::selective, SfiMode::sum, SfiMode::sum_ca, SfiMode::concat, SfiMode::concat_ca}) {
        ModelConfig cfg = desk();
        cfg.sfi_mode = mode;
        ParameterStore<double> store;
        Spaq<double> spaq(store, cfg);
        initialize_parameters(store, 3);
        Tape<double> tape(false);
        Context<double> ctx{tape};
        CHECK(spaq.forward(ctx, tape.constant(random_tensor({2, 3, 32, 64}, 1, 0.0, 1.0))).shape() == Shape{2, 8, 8, 16});
    }
}

TEST_CASE("SPAQ shares weights across frames") {
    ModelConfig cfg = desk();
    ParameterStore<double> store;
    Spaq<double> spaq(store, cfg);
    initialize_parameters(store, 4);
    const auto a = random_tensor({1, 3, 16, 32}, 30, 0.0, 1.0), b = random_tensor({1, 3, 16, 32}, 31, 0.0, 1.0);
    Tensor<double> ab({2, 3, 16, 32}), ba({2, 3, 16, 32});
    std::copy(a.storage().begin(), a.storage().end(), ab.storage().begin());
    std::copy(b.storage().begin(), b.storage().end(), ab.storage().begin() + a.size());
    std::copy(b.storage().begin(), b.storage().end(), ba.storage().begin());
    std::copy(a.storage().begin(), a.storage().end(), ba.storage().begin() + a.size());
    Tape<double> tape(false);
    Context<double> ctx{tape, BnMode::infer};
    const auto pab = spaq.forward(ctx, tape.constant(ab)).value(), pba = spaq.forward(ctx, tape.constant(ba)).value();
    const std::size_t half = pab.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
        CHECK(pab[i] == pba[half + i]);
        CHECK(pab[half + i] == pba[i]);
    }
}

TEST_CASE("motion estimation maps identical inputs to exact zeros") {
    Tape<double> tape(false);
    const auto p = random_tensor({2, 8, 4, 8}, 40, -1e3, 1e3);
    const auto m = motion_estimate(tape.constant(p), tape.constant(p), tape.constant(p));
    for (double v : m.minus.value().storage()) CHECK(v == 0.0);
    for (double v : m.plus.value().storage()) CHECK(v == 0.0);
    CHECK_THROWS_AS(motion_estimate(tape.constant(p), tape.constant(p), tape.constant(random_tensor({2, 8, 4, 4}, 1))),
                    ShapeError);
}

TEST_CASE("MPAQ matches the step-by-step oracle") {
    for (bool sa : {true, false})
        for (BnMode mode : {BnMode::train, BnMode::infer}) {
            ModelConfig cfg = desk();
            cfg.spatial_attention = sa;
            ParameterStore<double> store;
            Mpaq<double> mpaq(store, cfg);
            oracle::randomize(store, 50);
            const auto prev = random_tensor({2, 8, 4, 8}, 51), cur = random_tensor({2, 8, 4, 8}, 52),
                       next = random_tensor({2, 8, 4, 8}, 53);
            const auto expect = oracle::mpaq(prev, cur, next, store, cfg, "mpaq", mode);
            Tape<double> tape(false);
            Context<double> ctx{tape, mode};
            const auto tr = mpaq.trace(ctx, tape.constant(prev), tape.constant(cur), tape.constant(next));
            CHECK(tr.fused.shape() == Shape{2, 8, 4, 8});
            CHECK(tr.joined_minus.shape() == Shape{2, 16, 4, 8});
            CHECK(max_abs_diff(tr.out.value(), expect) < 1e-10);
        }
}

TEST_CASE("MFTN matches the step-by-step oracle") {
    for (bool normalize : {false, true})
        for (std::size_t S : {1, 4, 6}) {
            ModelConfig cfg = desk();
            cfg.normalize_similarity = normalize;
            ParameterStore<double> store;
            Mftn<double> mftn(store, cfg);
            oracle::randomize(store, 60 + S);
            const auto v = random_tensor({2, S, 4, 8, 8}, 61 + S);
            Tensor<double> sim;
            const auto expect = oracle::mftn(v, store, "mftn", normalize, &sim);
            Tape<double> tape(false);
            Context<double> ctx{tape};
            const auto r = mftn.forward(ctx, tape.constant(v));
            CHECK(max_abs_diff(r.out.value(), expect) < 1e-10);
            REQUIRE(r.embeddings.has_value());
            CHECK(max_abs_diff(r.embeddings->similarity.value(), sim) < 1e-10);
        }
}

TEST_CASE("MFTN similarity extents, residual identity and frame-permutation covariance") {
    ModelConfig cfg = desk(32, 8);
    ParameterStore<double> store;
    Mftn<double> mftn(store, cfg);
    oracle::randomize(store, 70);
    const auto v = random_tensor({1, 6, 16, 32, 32}, 71);
    Tape<double> tape(false);
    Context<double> ctx{tape};
    const auto r = mftn.forward(ctx, tape.constant(v));
    CHECK(r.embeddings->similarity.shape() == Shape{512, 6, 6});
    CHECK(r.embeddings->query.shape() == Shape{512, 6, 16});
    CHECK(r.embeddings->key.shape() == Shape{512, 16, 6});

    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Tensor<double> pv(v.shape());
    for (std::size_t s = 0; s < 6; ++s)
        for (std::size_t i = 0; i < 16; ++i)
            for (std::size_t j = 0; j < 32; ++j)
                for (std::size_t c = 0; c < 32; ++c) pv.at(0, s, i, j, c) = v.at(0, perm[s], i, j, c);
    const auto x = r.embeddings->similarity.value();
    const auto px = mftn.forward(ctx, tape.constant(pv)).embeddings->similarity.value();
    double worst = 0.0;
    for (std::size_t p = 0; p < 512; ++p)
        for (std::size_t a = 0; a < 6; ++a)
            for (std::size_t b = 0; b < 6; ++b) worst = std::max(worst, std::fabs(px.at(p, a, b) - x.at(p, perm[a], perm[b])));
    CHECK(worst < 1e-10);

    store.find("mftn.restore.weight")->value.fill(0.0);
    store.find("mftn.restore.bias")->value.fill(0.0);
    Tape<double> fresh(false);
    Context<double> fctx{fresh};
    CHECK(mftn.forward(fctx, fresh.constant(v)).out.value() == v);

    Tensor<double> same({1, 4, 2, 2, 32});
    const auto frame = random_tensor({2, 2, 32}, 72);
    for (std::size_t s = 0; s < 4; ++s)
        std::copy(frame.storage().begin(), frame.storage().end(), same.storage().begin() + s * frame.size());
    const auto xs = mftn.forward(fctx, fresh.constant(same)).embeddings->similarity.value();
    for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t a = 0; a < 4; ++a)
            for (std::size_t b = 0; b < 4; ++b) CHECK(xs.at(p, a, b) == doctest::Approx(xs.at(p, 0, 0)).epsilon(1e-12));
}

TEST_CASE("AQR head: zero weights give the final bias, any valid tubelet gives one score") {
    ParameterStore<double> store;
    Aqr<double> aqr(store, 8);
    zero_all(store);
    store.find("aqr.fc2.bias")->value.fill(0.625);
    Tape<double> tape(false);
    Context<double> ctx{tape};
    for (const Shape& s : {Shape{2, 4, 8, 16, 8}, Shape{1, 1, 4, 4, 8}, Shape{3, 6, 4, 8, 8}}) {
        const auto y = aqr.forward(ctx, tape.constant(random_tensor(s, 80)));
        CHECK(y.shape() == Shape{s[0]});
        for (double v : y.value().storage()) CHECK(v == 0.625);
    }
    CHECK_THROWS_AS(aqr.forward(ctx, tape.constant(random_tensor({1, 4, 2, 8, 8}, 81))), ShapeError);
}

TEST_CASE("complementary pooling sums max and average pooling") {
    Tape<double> tape(false);
    const auto x = random_tensor({1, 2, 4, 4, 4}, 90);
    const auto y = complementary_pool(tape.constant(x)).value();
    CHECK(y.shape() == Shape{1, 2, 2, 2, 2});
    double mx = -1e9, sum = 0.0;
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 2; ++c) {
                mx = std::max(mx, x.at(0, 1, a, b, c));
                sum += x.at(0, 1, a, b, c);
            }
    CHECK(y.at(0, 1, 0, 0, 0) == doctest::Approx(mx + sum / 8.0).epsilon(1e-14));
    CHECK(complementary_pool(tape.constant(random_tensor({1, 2, 1, 4, 4}, 91))).shape() == Shape{1, 2, 1, 2, 2});
}

TEST_CASE("pipeline maps every ablation configuration to one score per video") {
    struct Variant {
        const char* name;
        ModelConfig cfg;
        std::size_t clips;
    };
    std::vector<Variant> variants;
    const auto add = [&](const char* name, auto edit, std::size_t clips = 2) {
        ModelConfig c = desk();
        edit(c);
        variants.push_back({name, c, clips});
    };
    add("default", [](ModelConfig&) {});
    add("standard", [](ModelConfig& c) { c.backbone = Backbone::standard; });
    add("no long skip", [](ModelConfig& c) { c.long_skip = false; });
    add("no spatial attention", [](ModelConfig& c) { c.spatial_attention = false; });
    add("sfi concat_ca", [](ModelConfig& c) { c.sfi_mode = SfiMode::concat_ca; });
    add("mpaq off", [](ModelConfig& c) { c.mpaq_enabled = false; });
    add("mftn off", [](ModelConfig& c) { c.mftn_mode = MftnMode::off; });
    add("normalized", [](ModelConfig& c) { c.normalize_similarity = true; });
    for (std::size_t s = 1; s <= 6; s += 5) add("clips", [](ModelConfig&) {}, s);
    for (const auto& v : variants) {
        CAPTURE(v.name);
        Model<float> model(v.cfg);
        model.initialize(5);
        ClipBatch<float> batch{random_tensor<float>({3, 2 * v.clips, 3, 32, 64}, 92, 0.0, 1.0), 2, v.clips};
        Tape<float> tape(false);
        const auto tr = model.trace(tape, batch, BnMode::train);
        CHECK(tr.scores.shape() == Shape{2});
        CHECK(tr.tubelet.shape() == Shape{2, v.clips, 8, 16, 8});
        CHECK(tr.reweighted.shape() == tr.tubelet.shape());
        CHECK(tr.scores.value().all_finite());
    }
}

TEST_CASE("parameter counts and initialization") {
    ModelConfig full;
    full.channels = 32;
    full.reduction = 8;
    full.stage_blocks = {3, 4, 6};
    Model<float> model(full);
    const std::size_t n = model.parameters().trainable_elements();
    MESSAGE("full-scale trainable parameters: " << n);
    CHECK(n >= 500000);
    CHECK(n <= 3000000);

    Model<double> small(desk());
    small.initialize(11);
    for (const auto& p : small.parameters().all()) {
        CAPTURE(p.name);
        if (p.name.ends_with(".weight")) {
            const double fi = static_cast<double>(fan_in(p.value.shape()));
            double ss = 0.0;
            for (double v : p.value.storage()) ss += v * v;
            if (p.value.size() >= 256) CHECK(ss / p.value.size() == doctest::Approx(2.0 / fi).epsilon(0.35));
        } else {
            const double expect = p.name.ends_with(".gamma") || p.name.ends_with(".running_var") ? 1.0 : 0.0;
            for (double v : p.value.storage()) CHECK(v == expect);
        }
    }
    Model<double> again(desk());
    again.initialize(11);
    for (std::size_t i = 0; i < small.parameters().all().size(); ++i)
        CHECK(small.parameters().all()[i].value == again.parameters().all()[i].value);
}

TEST_CASE("frame extent requirements") {
    CHECK_NOTHROW(require_frame_extents(32, 64));
    CHECK_NOTHROW(require_frame_extents(16, 16));
    CHECK_THROWS_AS(require_frame_extents(8, 64), ShapeError);
    CHECK_THROWS_AS(require_frame_extents(36, 64), ShapeError);
}
