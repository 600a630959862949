#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "odvqa/metrics.hpp"

using namespace odvqa;

namespace {

// O(n^2) Kendall tau-b by pair counting.
double kendall_pairs(const std::vector<double>& x, const std::vector<double>& y) {
    long long conc = 0, disc = 0, tx = 0, ty = 0, n0 = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = i + 1; j < x.size(); ++j) {
            ++n0;
            const double dx = x[i] - x[j], dy = y[i] - y[j];
            if (dx == 0) ++tx;
            if (dy == 0) ++ty;
            if (dx == 0 || dy == 0) continue;
            (dx * dy > 0 ? conc : disc)++;
        }
    return double(conc - disc) / std::sqrt(double(n0 - tx) * double(n0 - ty));
}

std::vector<double> draw(std::mt19937_64& rng, std::size_t n, int levels) {
    std::vector<double> v(n);
    std::uniform_int_distribution<int> d(0, levels - 1);
    for (auto& e : v) e = d(rng);
    return v;
}

}  // namespace

TEST_CASE("correlation examples") {
    CHECK(plcc({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(krocc({1, 2, 3}, {3, 2, 1}) == -1.0);
    CHECK(srocc({1, 2, 3, 4}, {1, 8, 27, 64}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(rmse({0, 0}, {3, 4}) == doctest::Approx(3.5355339059327378).epsilon(1e-15));
    CHECK(mae({0, 0}, {3, 4}) == 3.5);
    const std::vector<double> x{1, 2, 2, 3}, y{1, 3, 2, 4};
    CHECK(krocc(x, y) == doctest::Approx(kendall_pairs(x, y)).epsilon(1e-15));
    CHECK(average_ranks({10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
}

TEST_CASE("degenerate inputs raise undefined-correlation errors") {
    CHECK_THROWS_AS(plcc({1, 1, 1}, {1, 2, 3}), UndefinedCorrelation);
    CHECK_THROWS_AS(srocc({1, 2, 3}, {4, 4, 4}), UndefinedCorrelation);
    CHECK_THROWS_AS(krocc({5}, {3}), UndefinedCorrelation);
    CHECK_THROWS_AS(plcc({1, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("krocc equals brute-force pair counting") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + trial % 9;
        auto x = draw(rng, n, 4), y = draw(rng, n, 4);
        if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) x[0] += 1;
        if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) y[0] += 1;
        CHECK(krocc(x, y) == doctest::Approx(kendall_pairs(x, y)).epsilon(1e-14));
    }
}

TEST_CASE("rank correlations are invariant under increasing maps; plcc under affine maps") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> d;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(30), y(30), fx(30), ax(30), nx(30);
        for (std::size_t i = 0; i < 30; ++i) {
            x[i] = d(rng);
            y[i] = x[i] + 0.7 * d(rng);
            fx[i] = std::exp(3 * x[i]) + x[i];
            ax[i] = 3.5 * x[i] - 2.0;
            nx[i] = -0.25 * x[i] + 9.0;
        }
        CHECK(srocc(fx, y) == srocc(x, y));
        CHECK(krocc(fx, y) == krocc(x, y));
        CHECK(std::fabs(plcc(ax, y) - plcc(x, y)) < 1e-12);
        CHECK(std::fabs(plcc(nx, y) + plcc(x, y)) < 1e-12);
        CHECK(srocc(x, y) == doctest::Approx(plcc(average_ranks(x), average_ranks(y))).epsilon(1e-15));
        const double s = srocc(x, y), k = krocc(x, y);
        CHECK(std::fabs(s) <= 1.0);
        CHECK(std::fabs(k) <= 1.0);
    }
}

TEST_CASE("logistic fit recovers planted parameters") {
    const std::array<std::array<double, 4>, 3> planted{{{80.0, 10.0, 0.5, 0.12}, {1.0, 0.05, -2.0, 1.5}, {60.0, 20.0, 3.0, 0.7}}};
    for (const auto& beta : planted) {
        std::vector<double> x, y;
        for (int i = 0; i < 40; ++i) {
            const double v = beta[2] + beta[3] * (-4.0 + 8.0 * i / 39.0);
            x.push_back(v);
            y.push_back(logistic4(beta, v));
        }
        const auto fit = logistic_fit(x, y);
        REQUIRE(fit.converged);
        for (int a = 0; a < 4; ++a) CHECK(std::fabs(fit.beta[a] - beta[a]) <= 1e-4 * std::fabs(beta[a]));
        CHECK(rmse(fit.fitted, y) < 1e-6);
    }
}

TEST_CASE("fitting predictions that equal the ground truth") {
    std::vector<double> x;
    for (int i = 0; i < 20; ++i) x.push_back(10.0 + 4.0 * i);
    const auto r = evaluate_predictions(std::vector<std::string>(20, "v"), x, x);
    REQUIRE(r.plcc.has_value());
    CHECK(std::fabs(*r.plcc - 1.0) < 1e-9);
    CHECK(*r.srocc == 1.0);
    CHECK(r.rmse < 0.5);
}

TEST_CASE("monotone fitting does not change rank correlations") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> d;
    std::vector<double> p(25), t(25);
    for (std::size_t i = 0; i < 25; ++i) {
        p[i] = d(rng);
        t[i] = 50 + 20 * std::tanh(p[i]) + 3 * d(rng);
    }
    const auto r = evaluate_predictions(std::vector<std::string>(25, "v"), p, t);
    CHECK(*r.srocc == srocc(r.fit.fitted, t));
    CHECK(*r.krocc == krocc(r.fit.fitted, t));
}

TEST_CASE("report for a single video keeps errors and flags correlations") {
    const auto r = evaluate_predictions({"only"}, {42.0}, {40.0});
    CHECK_FALSE(r.plcc.has_value());
    CHECK_FALSE(r.srocc.has_value());
    CHECK_FALSE(r.krocc.has_value());
    CHECK(r.rmse == 2.0);
    CHECK(r.mae == 2.0);
    const auto text = r.to_text();
    CHECK(text.find("plcc: undefined") != std::string::npos);
    CHECK(text.find("rmse: 2") != std::string::npos);
    CHECK(text.find("mae: 2") != std::string::npos);
    const auto scatter = r.scatter_text();
    CHECK(std::count(scatter.begin(), scatter.end(), '\n') == 1);
}

TEST_CASE("report is independent of manifest order") {
    std::vector<std::string> ids{"a", "b", "c", "d", "e", "f"};
    std::vector<double> p{0.1, 0.5, 0.2, 0.9, 0.4, 0.7}, t{12, 55, 30, 85, 41, 60};
    const auto r1 = evaluate_predictions(ids, p, t);
    std::vector<std::size_t> order{3, 0, 5, 1, 4, 2};
    std::vector<std::string> ids2;
    std::vector<double> p2, t2;
    for (auto i : order) {
        ids2.push_back(ids[i]);
        p2.push_back(p[i]);
        t2.push_back(t[i]);
    }
    const auto r2 = evaluate_predictions(ids2, p2, t2);
    CHECK(*r1.plcc == doctest::Approx(*r2.plcc).epsilon(1e-9));
    CHECK(*r1.srocc == *r2.srocc);
    CHECK(*r1.krocc == *r2.krocc);
    CHECK(r1.rmse == doctest::Approx(r2.rmse).epsilon(1e-9));
    const auto text = r1.to_text();
    for (const char* key : {"plcc:", "srocc:", "krocc:", "rmse:", "mae:"}) CHECK(text.find(key) != std::string::npos);
}
