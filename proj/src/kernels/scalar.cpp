#include "odvqa/kernels/kernels.hpp"

namespace odvqa::kernels {
namespace {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
             T* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * ldc;
        if (!accumulate)
            for (std::size_t j = 0; j < n; ++j) ci[j] = T(0);
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * lda + p];
            const T* bp = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
             T* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * ldc;
        if (!accumulate)
            for (std::size_t j = 0; j < n; ++j) ci[j] = T(0);
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[p * lda + i];
            const T* bp = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
             T* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * lda;
        for (std::size_t j = 0; j < n; ++j) {
            const T* bj = b + j * ldb;
            T s(0);
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * ldc + j] = accumulate ? c[i * ldc + j] + s : s;
        }
    }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
    T s(0);
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

template <typename T>
void gather4(std::size_t entries, const std::uint32_t* src, const T* w, const T* x, std::size_t c, T* out) {
    for (std::size_t e = 0; e < entries; ++e) {
        const T* x0 = x + src[4 * e] * c;
        const T* x1 = x + src[4 * e + 1] * c;
        const T* x2 = x + src[4 * e + 2] * c;
        const T* x3 = x + src[4 * e + 3] * c;
        const T w0 = w[4 * e], w1 = w[4 * e + 1], w2 = w[4 * e + 2], w3 = w[4 * e + 3];
        T* o = out + e * c;
        for (std::size_t j = 0; j < c; ++j) o[j] = w0 * x0[j] + w1 * x1[j] + w2 * x2[j] + w3 * x3[j];
    }
}

template <typename T>
void scatter4(std::size_t entries, const std::uint32_t* src, const T* w, const T* g, std::size_t c, T* gx) {
    for (std::size_t e = 0; e < entries; ++e) {
        const T* ge = g + e * c;
        for (int q = 0; q < 4; ++q) {
            T* dst = gx + src[4 * e + q] * c;
            const T wq = w[4 * e + q];
            for (std::size_t j = 0; j < c; ++j) dst[j] += wq * ge[j];
        }
    }
}

template <typename T>
constexpr KernelTable<T> make_table() {
    return {Isa::scalar, &gemm_nn<T>, &gemm_tn<T>, &gemm_nt<T>, &axpy<T>, &dot<T>, &gather4<T>, &scatter4<T>};
}

constexpr KernelTable<float> kFloat = make_table<float>();
constexpr KernelTable<double> kDouble = make_table<double>();

}  // namespace

template <>
const KernelTable<float>& scalar_table<float>() {
    return kFloat;
}
template <>
const KernelTable<double>& scalar_table<double>() {
    return kDouble;
}

}  // namespace odvqa::kernels
