#pragma once

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "odvqa/ops.hpp"

namespace testing {

using odvqa::Shape;
using odvqa::Tensor;

template <typename T = double>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(shape);
    for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
    return m;
}

template <typename T>
Tensor<T> tensor_of(const Shape& shape, std::vector<T> values) {
    return Tensor<T>(shape, std::move(values));
}

}  // namespace testing
