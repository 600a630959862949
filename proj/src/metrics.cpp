#include "odvqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace odvqa {
namespace {

void check_pair(const char* what, const std::vector<double>& x, const std::vector<double>& y, std::size_t min_n) {
    if (x.size() != y.size())
        throw std::invalid_argument(std::string(what) + ": lengths differ (" + std::to_string(x.size()) + " vs " +
                                    std::to_string(y.size()) + ")");
    if (x.size() < min_n)
        throw UndefinedCorrelation(std::string(what) + ": needs at least " + std::to_string(min_n) + " samples, got " +
                                   std::to_string(x.size()));
}

// Pairs sharing a value: sum over tie groups of g (g - 1) / 2. Input sorted.
template <typename Eq>
double tied_pairs(std::size_t n, Eq eq) {
    double total = 0.0;
    std::size_t run = 1;
    for (std::size_t i = 1; i <= n; ++i) {
        if (i < n && eq(i - 1, i)) {
            ++run;
        } else {
            total += 0.5 * static_cast<double>(run) * static_cast<double>(run - 1);
            run = 1;
        }
    }
    return total;
}

// Counts inversions of v while merge-sorting it.
double merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0.0;
    const std::size_t mid = lo + (hi - lo) / 2;
    double swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += static_cast<double>(mid - i);
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) buf[k++] = v[i++];
    while (j < hi) buf[k++] = v[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double stddev(const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

// Solves the 4x4 system a x = b by Gaussian elimination with partial pivoting.
bool solve4(std::array<std::array<double, 4>, 4> a, std::array<double, 4> b, std::array<double, 4>& x) {
    for (int c = 0; c < 4; ++c) {
        int piv = c;
        for (int r = c + 1; r < 4; ++r)
            if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
        if (!(std::fabs(a[piv][c]) > 0.0)) return false;
        std::swap(a[c], a[piv]);
        std::swap(b[c], b[piv]);
        for (int r = c + 1; r < 4; ++r) {
            const double f = a[r][c] / a[c][c];
            for (int k = c; k < 4; ++k) a[r][k] -= f * a[c][k];
            b[r] -= f * b[c];
        }
    }
    for (int c = 3; c >= 0; --c) {
        double s = b[c];
        for (int k = c + 1; k < 4; ++k) s -= a[c][k] * x[k];
        x[c] = s / a[c][c];
    }
    return true;
}

double sse(const std::array<double, 4>& beta, const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = logistic4(beta, x[i]) - y[i];
        s += r * r;
    }
    return s;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(9) << v;
    return os.str();
}

}  // namespace

double plcc(const std::vector<double>& x, const std::vector<double>& y) {
    check_pair("plcc", x, y, 2);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("plcc: undefined for constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double srocc(const std::vector<double>& x, const std::vector<double>& y) {
    check_pair("srocc", x, y, 2);
    try {
        return plcc(average_ranks(x), average_ranks(y));
    } catch (const UndefinedCorrelation&) {
        throw UndefinedCorrelation("srocc: undefined for constant input");
    }
}

// Knight's algorithm: sort by (x, y), count pairs tied in x and in (x, y),
// then count y-inversions with a merge sort to get the discordant pairs.
double krocc(const std::vector<double>& x, const std::vector<double>& y) {
    check_pair("krocc", x, y, 2);
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
    });
    const double tx = tied_pairs(n, [&](std::size_t a, std::size_t b) { return x[order[a]] == x[order[b]]; });
    const double txy = tied_pairs(n, [&](std::size_t a, std::size_t b) {
        return x[order[a]] == x[order[b]] && y[order[a]] == y[order[b]];
    });
    std::vector<double> ys(n), buf(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
    const double discordant = merge_count(ys, buf, 0, n);  // ys is now sorted
    const double ty = tied_pairs(n, [&](std::size_t a, std::size_t b) { return ys[a] == ys[b]; });
    const double n0 = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    const double denom = std::sqrt((n0 - tx) * (n0 - ty));
    if (!(denom > 0.0)) throw UndefinedCorrelation("krocc: undefined for constant input");
    // concordant - discordant = n0 - tx - ty + txy - 2 * discordant
    return std::clamp((n0 - tx - ty + txy - 2.0 * discordant) / denom, -1.0, 1.0);
}

double rmse(const std::vector<double>& x, const std::vector<double>& y) {
    check_pair("rmse", x, y, 1);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(s / static_cast<double>(x.size()));
}

double mae(const std::vector<double>& x, const std::vector<double>& y) {
    check_pair("mae", x, y, 1);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::fabs(x[i] - y[i]);
    return s / static_cast<double>(x.size());
}

double logistic4(const std::array<double, 4>& b, double x) {
    return b[1] + (b[0] - b[1]) / (1.0 + std::exp(-(x - b[2]) / std::fabs(b[3])));
}

LogisticFit logistic_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("logistic_fit: lengths differ");
    if (x.size() < 5) throw std::invalid_argument("logistic_fit: needs at least 5 samples, got " + std::to_string(x.size()));
    LogisticFit out;
    std::array<double, 4> b{*std::max_element(y.begin(), y.end()), *std::min_element(y.begin(), y.end()), median(x),
                            stddev(x)};
    if (!(b[3] > 0.0)) b[3] = 1.0;
    double cost = sse(b, x, y);
    double lambda = 1e-3;
    bool done = false;
    for (std::size_t it = 0; it < 200 && !done; ++it) {
        out.iterations = it + 1;
        std::array<std::array<double, 4>, 4> jtj{};
        std::array<double, 4> jtr{};
        const double s4 = std::fabs(b[3]);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double z = (x[i] - b[2]) / s4;
            const double e = std::exp(-z);
            const double q = 1.0 / (1.0 + e);  // logistic(z)
            const double dq = q * (1.0 - q);
            const double r = b[1] + (b[0] - b[1]) * q - y[i];
            const std::array<double, 4> j{q, 1.0 - q, -(b[0] - b[1]) * dq / s4,
                                          -(b[0] - b[1]) * dq * z / s4 * (b[3] < 0 ? -1.0 : 1.0)};
            for (int a = 0; a < 4; ++a) {
                jtr[a] += j[a] * r;
                for (int c = 0; c < 4; ++c) jtj[a][c] += j[a] * j[c];
            }
        }
        // Marquardt damping: retry with a larger lambda until the cost drops.
        for (int attempt = 0; attempt < 30; ++attempt) {
            auto damped = jtj;
            for (int a = 0; a < 4; ++a) damped[a][a] += lambda * (jtj[a][a] > 0 ? jtj[a][a] : 1.0);
            std::array<double, 4> step{};
            std::array<double, 4> rhs{-jtr[0], -jtr[1], -jtr[2], -jtr[3]};
            if (!solve4(damped, rhs, step)) {
                lambda *= 10.0;
                continue;
            }
            const double norm = std::sqrt(step[0] * step[0] + step[1] * step[1] + step[2] * step[2] + step[3] * step[3]);
            std::array<double, 4> cand{b[0] + step[0], b[1] + step[1], b[2] + step[2], b[3] + step[3]};
            const double c = cand[3] != 0.0 ? sse(cand, x, y) : INFINITY;
            if (std::isfinite(c) && c <= cost) {
                b = cand;
                cost = c;
                lambda = std::max(lambda * 0.1, 1e-12);
                if (norm < 1e-10) done = true;
                break;
            }
            if (norm < 1e-10) {
                done = true;
                break;
            }
            lambda *= 10.0;
        }
    }
    out.beta = {b[0], b[1], b[2], std::fabs(b[3])};
    const bool finite = std::isfinite(cost) && std::all_of(b.begin(), b.end(), [](double v) { return std::isfinite(v); });
    out.converged = done && finite;
    if (out.converged) {
        for (double v : x) out.fitted.push_back(logistic4(out.beta, v));
    } else {
        out.fitted = x;
        out.note = "logistic fit did not converge in 200 iterations; identity mapping used";
    }
    return out;
}

MetricReport evaluate_predictions(const std::vector<std::string>& ids, const std::vector<double>& predicted,
                                  const std::vector<double>& truth) {
    if (ids.size() != predicted.size() || truth.size() != predicted.size())
        throw std::invalid_argument("evaluate: ids, predictions and ground truth differ in length");
    if (predicted.empty()) throw std::invalid_argument("evaluate: no videos");
    MetricReport r;
    r.n = predicted.size();
    if (r.n >= 5) {
        r.fit = logistic_fit(predicted, truth);
    } else {
        r.fit.fitted = predicted;
        r.fit.note = "fewer than 5 videos; identity mapping used";
    }
    try {
        r.plcc = plcc(r.fit.fitted, truth);
        r.srocc = srocc(predicted, truth);
        r.krocc = krocc(predicted, truth);
    } catch (const UndefinedCorrelation& e) {
        r.plcc.reset();
        r.srocc.reset();
        r.krocc.reset();
        r.undefined_reason = e.what();
    }
    r.rmse = rmse(r.fit.fitted, truth);
    r.mae = mae(r.fit.fitted, truth);
    for (std::size_t i = 0; i < r.n; ++i) r.rows.push_back({ids[i], predicted[i], r.fit.fitted[i], truth[i]});
    return r;
}

std::string MetricReport::to_text() const {
    std::ostringstream os;
    const auto corr = [&](const char* name, const std::optional<double>& v) {
        os << name << ": ";
        if (v) os << fmt(*v);
        else os << "undefined (" << undefined_reason << ")";
        os << '\n';
    };
    os << "n: " << n << '\n';
    corr("plcc", plcc);
    corr("srocc", srocc);
    corr("krocc", krocc);
    os << "rmse: " << fmt(rmse) << '\n' << "mae: " << fmt(mae) << '\n';
    os << "fit: " << (fit.converged ? "logistic" : "identity") << '\n';
    if (!fit.note.empty()) os << "fit_warning: " << fit.note << '\n';
    if (fit.converged)
        for (int i = 0; i < 4; ++i) os << "beta" << (i + 1) << ": " << fmt(fit.beta[i]) << '\n';
    os << "\n# id predicted fitted ground_truth\n";
    for (const auto& row : rows)
        os << row.id << ' ' << fmt(row.predicted) << ' ' << fmt(row.fitted) << ' ' << fmt(row.truth) << '\n';
    return os.str();
}

std::string MetricReport::scatter_text() const {
    std::ostringstream os;
    for (const auto& row : rows) os << fmt(row.predicted) << ' ' << fmt(row.fitted) << ' ' << fmt(row.truth) << '\n';
    return os.str();
}

}  // namespace odvqa
