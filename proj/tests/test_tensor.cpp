#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "helpers.hpp"
#include "odvqa/checkpoint.hpp"
#include "odvqa/ops.hpp"

using namespace odvqa;
using testing::max_abs_diff;
using testing::random_tensor;
using testing::tensor_of;

namespace {

// Textbook cross-correlation with reflect padding (no edge repeat).
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
    const std::size_t B = x.dim(0), cin = x.dim(1), H = x.dim(2), W = x.dim(3), cout = w.dim(0), k = w.dim(2);
    const auto reflect = [](long long i, long long n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
        return static_cast<std::size_t>(i);
    };
    Tensor<double> out({B, cout, H, W});
    const long long half = static_cast<long long>(k / 2);
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    double s = b[o];
                    for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v) {
                                const auto r = reflect(static_cast<long long>(i + u) - half, static_cast<long long>(H));
                                const auto q = reflect(static_cast<long long>(j + v) - half, static_cast<long long>(W));
                                s += w.at(o, c, u, v) * x.at(n, c, r, q);
                            }
                    out.at(n, o, i, j) = s;
                }
    return out;
}

}  // namespace

TEST_CASE("tensor rejects zero extents and mismatched element counts") {
    CHECK_THROWS_AS(Tensor<float>({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
    Tensor<float> t({2, 3}, 1.5f);
    CHECK(t.size() == 6);
    CHECK(t.all_finite());
    t[4] = std::numeric_limits<float>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("conv2d_sampled examples") {
    Tape<double> tape(false);
    SUBCASE("identity kernel reproduces the input") {
        const auto x = random_tensor({1, 4, 4}, 1);
        auto y = conv2d_sampled(tape.constant(x), tape.constant(Tensor<double>({1, 1, 1, 1}, 1.0)),
                                tape.constant(Tensor<double>({1})), sampling_grid(GridKind::regular, 4, 4, 1, 1));
        CHECK(max_abs_diff(y.value(), x) == 0.0);
    }
    SUBCASE("3x3 mean filter with reflect padding on a 2x2 image") {
        const auto x = tensor_of<double>({1, 2, 2}, {1, 2, 3, 4});
        auto y = conv2d_sampled(tape.constant(x), tape.constant(Tensor<double>({1, 1, 3, 3}, 1.0 / 9.0)),
                                tape.constant(Tensor<double>({1})), sampling_grid(GridKind::regular, 2, 2, 3, 1));
        // rows reflect to {1,0,1} and {0,1,0}; summed by hand
        const auto expect = tensor_of<double>({1, 2, 2}, {27.0 / 9, 24.0 / 9, 21.0 / 9, 18.0 / 9});
        CHECK(max_abs_diff(y.value(), expect) < 1e-14);
    }
    SUBCASE("zero weight leaves the bias") {
        auto y = conv2d_sampled(tape.constant(random_tensor({2, 5, 6}, 2)), tape.constant(Tensor<double>({1, 2, 3, 3})),
                                tape.constant(Tensor<double>({1}, 5.0)), sampling_grid(GridKind::spherical, 5, 6, 3, 1));
        for (double v : y.value().storage()) CHECK(v == 5.0);
    }
    SUBCASE("shape mismatches are rejected before computing") {
        const auto g = sampling_grid(GridKind::regular, 4, 4, 3, 1);
        CHECK_THROWS_AS(conv2d_sampled(tape.constant(Tensor<double>({2, 4, 5})), tape.constant(Tensor<double>({1, 2, 3, 3})),
                                       tape.constant(Tensor<double>({1})), g),
                        ShapeError);
        CHECK_THROWS_AS(conv2d_sampled(tape.constant(Tensor<double>({2, 4, 4})), tape.constant(Tensor<double>({1, 3, 3, 3})),
                                       tape.constant(Tensor<double>({1})), g),
                        ShapeError);
        CHECK_THROWS_AS(conv2d_sampled(tape.constant(Tensor<double>({2, 4, 4})), tape.constant(Tensor<double>({1, 2, 3, 3})),
                                       tape.constant(Tensor<double>({2})), g),
                        ShapeError);
    }
}

TEST_CASE("regular-grid conv2d_sampled equals the triple-loop oracle") {
    for (std::size_t k : {1, 3, 5}) {
        const auto x = random_tensor({2, 3, 7, 9}, 10 + k);
        const auto w = random_tensor({4, 3, k, k}, 20 + k);
        const auto b = random_tensor({4}, 30 + k);
        Tape<double> tape(false);
        auto y = conv2d_sampled(tape.constant(x), tape.constant(w), tape.constant(b),
                                sampling_grid(GridKind::regular, 7, 9, k, 1));
        CHECK(max_abs_diff(y.value(), conv_oracle(x, w, b)) < 1e-10);
    }
}

TEST_CASE("float and double conv2d_sampled agree") {
    const auto x = random_tensor({2, 5, 8, 16}, 3);
    const auto w = random_tensor({6, 5, 3, 3}, 4);
    const auto b = random_tensor({6}, 5);
    const auto g = sampling_grid(GridKind::spherical, 8, 16, 3, 2);
    Tape<double> td(false);
    Tape<float> tf(false);
    const auto yd = conv2d_sampled(td.constant(x), td.constant(w), td.constant(b), g).value();
    const auto yf = conv2d_sampled(tf.constant(x.cast<float>()), tf.constant(w.cast<float>()), tf.constant(b.cast<float>()), g)
                        .value();
    CHECK(max_abs_diff(yf.cast<double>(), yd) < 1e-5);
}

TEST_CASE("matmul_batched examples") {
    Tape<double> tape(false);
    const auto b = random_tensor({2, 3, 4}, 6);
    Tensor<double> eye({2, 3, 3});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 3; ++i) eye.at(n, i, i) = 1.0;
    CHECK(max_abs_diff(matmul_batched(tape.constant(eye), tape.constant(b)).value(), b) == 0.0);

    auto six = matmul_batched(tape.constant(Tensor<double>({1, 1, 1}, 2.0)), tape.constant(Tensor<double>({1, 1, 1}, 3.0)));
    CHECK(six.value()[0] == 6.0);

    const auto a = random_tensor({2, 3, 4}, 7), c = random_tensor({2, 4, 2}, 8);
    Tensor<double> oracle({2, 3, 2});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j)
                for (std::size_t k = 0; k < 4; ++k) oracle.at(n, i, j) += a.at(n, i, k) * c.at(n, k, j);
    CHECK(max_abs_diff(matmul_batched(tape.constant(a), tape.constant(c)).value(), oracle) < 1e-12);
    CHECK_THROWS_AS(matmul_batched(tape.constant(a), tape.constant(a)), ShapeError);
}

TEST_CASE("softmax examples and partition of unity") {
    Tape<double> tape(false);
    auto u = softmax(tape.constant(Tensor<double>({3}, 0.0)), 0);
    for (double v : u.value().storage()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    auto q = softmax(tape.constant(tensor_of<double>({2}, {0.0, std::log(3.0)})), 0);
    CHECK(q.value()[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(q.value()[1] == doctest::Approx(0.75).epsilon(1e-14));
    auto big = softmax(tape.constant(tensor_of<double>({2}, {1000.0, 1001.0})), 0);
    auto small = softmax(tape.constant(tensor_of<double>({2}, {0.0, 1.0})), 0);
    CHECK(big.value().all_finite());
    CHECK(max_abs_diff(big.value(), small.value()) < 1e-15);

    Tape<float> tf(false);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto s = softmax(tf.constant(random_tensor<float>({3, 5, 4}, seed, -50.0, 50.0)), 1).value();
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t c = 0; c < 4; ++c) {
                double sum = 0.0;
                for (std::size_t b = 0; b < 5; ++b) sum += s.at(a, b, c);
                CHECK(std::fabs(sum - 1.0) < 1e-6);
            }
    }
}

TEST_CASE("global_average_pool examples") {
    Tape<double> tape(false);
    CHECK(global_average_pool(tape.constant(tensor_of<double>({1, 2, 2}, {1, 2, 3, 4})), 1).value()[0] == 2.5);
    CHECK(global_average_pool(tape.constant(Tensor<double>({2, 3, 3}, 0.7)), 1).value()[1] == doctest::Approx(0.7));
    const auto x = random_tensor({3, 5, 7}, 9);
    const auto g = global_average_pool(tape.constant(x), 1).value();
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 7; ++j) s += x.at(c, i, j);
        CHECK(g[c] == doctest::Approx(s / 35.0).epsilon(1e-14));
    }
}

TEST_CASE("resize examples") {
    Tape<double> tape(false);
    CHECK(resize(tape.constant(tensor_of<double>({1, 2, 2}, {1, 2, 3, 4})), Resize::down2).value()[0] == 2.5);
    const Tensor<double> c({2, 3, 4}, 0.3);
    auto round = resize(resize(tape.constant(c), Resize::up2), Resize::down2);
    CHECK(max_abs_diff(round.value(), c) < 1e-15);
    CHECK_THROWS_AS(resize(tape.constant(Tensor<double>({1, 3, 4})), Resize::down2), ShapeError);

    // half-pixel centres with edge clamping: output (i, j) samples ((i + 0.5) / 2 - 0.5, ...)
    const auto ramp = tensor_of<double>({1, 2, 2}, {0, 1, 2, 3});
    const auto up = resize(tape.constant(ramp), Resize::up2).value();
    const auto sample = [&](double r, double q) {
        r = std::clamp(r, 0.0, 1.0);
        q = std::clamp(q, 0.0, 1.0);
        return (1 - r) * ((1 - q) * 0 + q * 1) + r * ((1 - q) * 2 + q * 3);
    };
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(up.at(0, i, j) == doctest::Approx(sample((i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5)).epsilon(1e-14));
}

TEST_CASE("pool3d examples") {
    Tape<double> tape(false);
    const Tensor<double> c({2, 2, 4, 4}, -1.25);
    for (PoolKind kind : {PoolKind::max, PoolKind::avg})
        for (double v : pool3d(tape.constant(c), {2, 2, 2}, {2, 2, 2}, kind).value().storage()) CHECK(v == -1.25);
    auto m = pool3d(tape.constant(tensor_of<double>({1, 1, 2, 2}, {1, 2, 3, 4})), {1, 2, 2}, {1, 2, 2}, PoolKind::max);
    CHECK(m.value()[0] == 4.0);

    const auto x = random_tensor({2, 4, 5, 6}, 11);
    const auto mx = pool3d(tape.constant(x), {2, 2, 2}, {2, 2, 2}, PoolKind::max).value();
    const auto av = pool3d(tape.constant(x), {2, 2, 2}, {2, 2, 2}, PoolKind::avg).value();
    REQUIRE(mx.shape() == Shape{2, 2, 3, 3});
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j) {
                    double best = -1e300, sum = 0.0;
                    std::size_t n = 0;
                    for (std::size_t a = 2 * s; a < std::min<std::size_t>(2 * s + 2, 4); ++a)
                        for (std::size_t b = 2 * i; b < std::min<std::size_t>(2 * i + 2, 5); ++b)
                            for (std::size_t d = 2 * j; d < std::min<std::size_t>(2 * j + 2, 6); ++d) {
                                best = std::max(best, x.at(c, a, b, d));
                                sum += x.at(c, a, b, d);
                                ++n;
                            }
                    CHECK(mx.at(c, s, i, j) == best);
                    CHECK(av.at(c, s, i, j) == doctest::Approx(sum / static_cast<double>(n)).epsilon(1e-14));
                }
    CHECK_THROWS_AS(pool3d(tape.constant(Tensor<double>({1, 1, 2, 2})), {2, 2, 2}, {2, 2, 2}, PoolKind::max), ShapeError);
}

TEST_CASE("batch_norm examples") {
    const auto x = random_tensor({4, 3, 5, 2}, 12, -2.0, 3.0);
    Parameter<double> rm{"rm", Tensor<double>({3}), Tensor<double>({3}), false};
    Parameter<double> rv{"rv", Tensor<double>({3}, 1.0), Tensor<double>({3}), false};
    Tape<double> tape(false);
    const auto one = tape.constant(Tensor<double>({3}, 1.0)), zero = tape.constant(Tensor<double>({3}));
    const auto y = batch_norm(tape.constant(x), one, zero, rm, rv, BnMode::train).value();
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0, ss = 0, xs = 0, xss = 0;
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t j = 0; j < 2; ++j) {
                    s += y.at(b, c, i, j);
                    ss += y.at(b, c, i, j) * y.at(b, c, i, j);
                    xs += x.at(b, c, i, j);
                    xss += x.at(b, c, i, j) * x.at(b, c, i, j);
                }
        const double mean = xs / 40, var = xss / 40 - mean * mean;
        CHECK(std::fabs(s / 40) < 1e-12);
        CHECK(ss / 40 == doctest::Approx(var / (var + 1e-5)).epsilon(1e-10));
        // running <- 0.9 running + 0.1 batch, variance unbiased
        CHECK(rm.value[c] == doctest::Approx(0.1 * mean).epsilon(1e-12));
        CHECK(rv.value[c] == doctest::Approx(0.9 + 0.1 * var * 40.0 / 39.0).epsilon(1e-12));
    }

    const auto again = batch_norm(tape.constant(y), one, zero, rm, rv, BnMode::train).value();
    CHECK(max_abs_diff(again, y) < 1e-4);

    Parameter<double> m2{"m", testing::tensor_of<double>({3}, {1, 2, 3}), Tensor<double>({3}), false};
    Parameter<double> v2{"v", testing::tensor_of<double>({3}, {4, 9, 16}), Tensor<double>({3}), false};
    const auto inf = batch_norm(tape.constant(x), one, zero, m2, v2, BnMode::infer).value();
    CHECK(inf.at(1, 2, 3, 1) == doctest::Approx((x.at(1, 2, 3, 1) - 3.0) / std::sqrt(16.0 + 1e-5)).epsilon(1e-14));
    CHECK(m2.value[0] == 1.0);

    CHECK_THROWS_AS(batch_norm(tape.constant(Tensor<double>({1, 3, 2, 2})), one, zero, rm, rv, BnMode::train),
                    std::invalid_argument);
}

TEST_CASE("pointwise examples") {
    Tape<double> tape(false);
    const auto r = relu(tape.constant(tensor_of<double>({2}, {-1.0, 2.0}))).value();
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 2.0);
    CHECK(sigmoid(tape.constant(Tensor<double>({1}))).value()[0] == 0.5);
    const auto x = random_tensor({2, 3, 4}, 13);
    Tensor<double> eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    CHECK(max_abs_diff(linear(tape.constant(x), tape.constant(eye), tape.constant(Tensor<double>({4}))).value(), x) == 0.0);
    CHECK_THROWS_AS(concat<double>({tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({3, 3}))}, 1),
                    ShapeError);
    CHECK_THROWS_AS(add(tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({3, 2}))), ShapeError);
}

TEST_CASE("backward examples") {
    SUBCASE("x squared") {
        Tape<double> tape;
        const auto x = tape.leaf(Tensor<double>::scalar(3.0));
        tape.backward(mul(x, x), Tensor<double>::scalar(1.0));
        CHECK(tape.grad(x)->at(0) == 6.0);
    }
    SUBCASE("softmax Jacobian rows sum to zero") {
        for (std::size_t k = 0; k < 5; ++k) {
            Tape<double> tape;
            const auto x = tape.leaf(random_tensor({5}, 40 + k, -3.0, 3.0));
            tape.backward(pick(softmax(x, 0), k), Tensor<double>::scalar(1.0));
            double s = 0.0;
            for (double g : tape.grad(x)->storage()) s += g;
            CHECK(std::fabs(s) < 1e-15);
        }
    }
    SUBCASE("parameter reuse accumulates") {
        ParameterStore<double> store;
        auto& p = store.add("p", {2}, true, 1.5);
        Tape<double> tape;
        const auto a = tape.param(p), b = tape.param(p);
        tape.backward(sum(add(mul(a, b), a)), Tensor<double>::scalar(1.0));
        CHECK(p.grad[0] == doctest::Approx(2 * 1.5 + 1));
        Tape<double> second;
        const auto c = second.param(p);
        second.backward(sum(c), Tensor<double>::scalar(1.0));
        CHECK(p.grad[1] == doctest::Approx(2 * 1.5 + 2));
        store.zero_grad();
        CHECK(p.grad[1] == 0.0);
    }
    SUBCASE("a consumed tape rejects a second backward") {
        Tape<double> tape;
        const auto x = tape.leaf(Tensor<double>::scalar(2.0));
        const auto y = mul(x, x);
        tape.backward(y, Tensor<double>::scalar(1.0));
        CHECK_THROWS_AS(tape.backward(y, Tensor<double>::scalar(1.0)), std::logic_error);
    }
    SUBCASE("seed shape must match") {
        Tape<double> tape;
        const auto x = tape.leaf(Tensor<double>({3}));
        CHECK_THROWS_AS(tape.backward(relu(x), Tensor<double>({2})), ShapeError);
    }
    SUBCASE("adjoints replay in reverse execution order") {
        Tape<double> tape;
        std::vector<int> order;
        const auto x = tape.leaf(Tensor<double>::scalar(1.0));
        const auto a = tape.record(x.value(), {x}, [&](Tape<double>& t, const Tensor<double>& g, const Tensor<double>&) {
            order.push_back(1);
            *t.grad_sink(x) += g;
        });
        const auto b = tape.record(a.value(), {a}, [&](Tape<double>& t, const Tensor<double>& g, const Tensor<double>&) {
            order.push_back(2);
            *t.grad_sink(a) += g;
        });
        tape.backward(b, Tensor<double>::scalar(1.0));
        CHECK(order == std::vector<int>{2, 1});
    }
}

TEST_CASE("operations are deterministic") {
    const auto x = random_tensor<float>({2, 4, 8, 16}, 14);
    const auto w = random_tensor<float>({3, 4, 3, 3}, 15);
    const auto run = [&] {
        Tape<float> tape;
        const auto xv = tape.leaf(x), wv = tape.leaf(w);
        const auto y = conv2d_sampled(xv, wv, tape.constant(Tensor<float>({3})), sampling_grid(GridKind::spherical, 8, 16, 3, 1));
        tape.backward(y, Tensor<float>(y.shape(), 1.0f));
        return std::make_pair(y.value(), *tape.grad(wv));
    };
    CHECK(run() == run());
}

TEST_CASE("checkpoint round trip is bit exact") {
    ParameterStore<float> store;
    auto& a = store.add("a.weight", {2, 3});
    auto& b = store.add("b.bias", {4});
    a.value = random_tensor<float>({2, 3}, 16);
    b.value = random_tensor<float>({4}, 17);
    const auto path = std::filesystem::temp_directory_path() / "odvqa_ckpt_roundtrip.ckpt";
    write_checkpoint(path, snapshot(store, "channels=8\n"));
    const auto bytes = encode_checkpoint(read_checkpoint(path));
    CHECK(bytes == encode_checkpoint(snapshot(store, "channels=8\n")));

    ParameterStore<float> other;
    other.add("a.weight", {2, 3});
    other.add("b.bias", {4});
    restore(other, read_checkpoint(path));
    CHECK(other.find("a.weight")->value == a.value);
    CHECK(other.find("b.bias")->value == b.value);
    CHECK(read_checkpoint(path).header == "channels=8\n");

    ParameterStore<float> wrong;
    wrong.add("a.weight", {3, 2});
    wrong.add("b.bias", {4});
    CHECK_THROWS(restore(wrong, read_checkpoint(path)));
    auto corrupt = bytes;
    corrupt[0] = 'X';
    CHECK_THROWS(decode_checkpoint(corrupt));
    std::filesystem::remove(path);
}
