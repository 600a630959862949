#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace odvqa {

/// A correlation whose denominator vanishes (constant input or too few samples).
class UndefinedCorrelation : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

double plcc(const std::vector<double>& x, const std::vector<double>& y);
double srocc(const std::vector<double>& x, const std::vector<double>& y);
/// Kendall tau-b, O(n log n).
double krocc(const std::vector<double>& x, const std::vector<double>& y);
double rmse(const std::vector<double>& x, const std::vector<double>& y);
double mae(const std::vector<double>& x, const std::vector<double>& y);

/// 1-based ranks with ties sharing their average rank.
std::vector<double> average_ranks(const std::vector<double>& x);

/// f(x) = b2 + (b1 - b2) / (1 + exp(-(x - b3) / |b4|))
double logistic4(const std::array<double, 4>& beta, double x);

struct LogisticFit {
    std::array<double, 4> beta{};  // beta[3] is reported as |b4|
    std::vector<double> fitted;
    bool converged = false;  // false: identity mapping used instead
    std::size_t iterations = 0;
    std::string note;
};

/// Least-squares fit by damped Gauss-Newton (at most 200 iterations, stop when
/// the step norm drops below 1e-10). Needs n >= 5.
LogisticFit logistic_fit(const std::vector<double>& predicted, const std::vector<double>& truth);

struct MetricRow {
    std::string id;
    double predicted = 0, fitted = 0, truth = 0;
};

struct MetricReport {
    std::size_t n = 0;
    std::optional<double> plcc, srocc, krocc;  // empty when undefined
    std::string undefined_reason;
    double rmse = 0, mae = 0;
    LogisticFit fit;
    std::vector<MetricRow> rows;

    std::string to_text() const;
    std::string scatter_text() const;  // "predicted fitted truth" per line
};

/// PLCC/RMSE/MAE on fitted scores, SROCC/KROCC on raw predictions. With fewer
/// than five samples the identity mapping is used.
MetricReport evaluate_predictions(const std::vector<std::string>& ids, const std::vector<double>& predicted,
                                  const std::vector<double>& truth);

}  // namespace odvqa
