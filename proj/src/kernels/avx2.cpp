// Compiled with -mavx2 -mfma. Nothing in this translation unit may run before
// dispatch.cpp has confirmed CPU support.
#include "odvqa/kernels/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace odvqa::kernels {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
    using reg = __m256;
    static constexpr std::size_t width = 8;
    static reg zero() { return _mm256_setzero_ps(); }
    static reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
    static reg broadcast(float v) { return _mm256_set1_ps(v); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
    static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
    static float hsum(reg v) {
        __m128 lo = _mm256_castps256_ps128(v);
        __m128 hi = _mm256_extractf128_ps(v, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 sh = _mm_movehdup_ps(lo);
        __m128 s = _mm_add_ps(lo, sh);
        sh = _mm_movehl_ps(sh, s);
        s = _mm_add_ss(s, sh);
        return _mm_cvtss_f32(s);
    }
};

template <>
struct Vec<double> {
    using reg = __m256d;
    static constexpr std::size_t width = 4;
    static reg zero() { return _mm256_setzero_pd(); }
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg broadcast(double v) { return _mm256_set1_pd(v); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
    static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
    static double hsum(reg v) {
        __m128d lo = _mm256_castpd256_pd128(v);
        __m128d hi = _mm256_extractf128_pd(v, 1);
        lo = _mm_add_pd(lo, hi);
        __m128d h = _mm_unpackhi_pd(lo, lo);
        return _mm_cvtsd_f64(_mm_add_sd(lo, h));
    }
};

// Register-blocked broadcast/FMA product: 4 rows x 2 vectors of C per tile.
// A(i, p) lives at a[i * a_rs + p * a_cs], which covers both the N and T layouts.
template <typename T>
void gemm_bcast(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_rs, std::size_t a_cs,
                const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        std::size_t j = 0;
        for (; j + 2 * W <= n; j += 2 * W) {
            typename V::reg acc[4][2];
            for (auto& r : acc) r[0] = r[1] = V::zero();
            for (std::size_t p = 0; p < k; ++p) {
                const T* bp = b + p * ldb + j;
                const auto b0 = V::load(bp);
                const auto b1 = V::load(bp + W);
                for (std::size_t r = 0; r < 4; ++r) {
                    const auto av = V::broadcast(a[(i + r) * a_rs + p * a_cs]);
                    acc[r][0] = V::fma(av, b0, acc[r][0]);
                    acc[r][1] = V::fma(av, b1, acc[r][1]);
                }
            }
            for (std::size_t r = 0; r < 4; ++r) {
                T* cp = c + (i + r) * ldc + j;
                if (accumulate) {
                    acc[r][0] = V::add(acc[r][0], V::load(cp));
                    acc[r][1] = V::add(acc[r][1], V::load(cp + W));
                }
                V::store(cp, acc[r][0]);
                V::store(cp + W, acc[r][1]);
            }
        }
        for (; j + W <= n; j += W) {
            typename V::reg acc[4] = {V::zero(), V::zero(), V::zero(), V::zero()};
            for (std::size_t p = 0; p < k; ++p) {
                const auto b0 = V::load(b + p * ldb + j);
                for (std::size_t r = 0; r < 4; ++r)
                    acc[r] = V::fma(V::broadcast(a[(i + r) * a_rs + p * a_cs]), b0, acc[r]);
            }
            for (std::size_t r = 0; r < 4; ++r) {
                T* cp = c + (i + r) * ldc + j;
                if (accumulate) acc[r] = V::add(acc[r], V::load(cp));
                V::store(cp, acc[r]);
            }
        }
        for (; j < n; ++j) {
            for (std::size_t r = 0; r < 4; ++r) {
                T s(0);
                for (std::size_t p = 0; p < k; ++p) s += a[(i + r) * a_rs + p * a_cs] * b[p * ldb + j];
                T* cp = c + (i + r) * ldc + j;
                *cp = accumulate ? *cp + s : s;
            }
        }
    }
    for (; i < m; ++i) {
        std::size_t j = 0;
        for (; j + W <= n; j += W) {
            auto acc = V::zero();
            for (std::size_t p = 0; p < k; ++p)
                acc = V::fma(V::broadcast(a[i * a_rs + p * a_cs]), V::load(b + p * ldb + j), acc);
            T* cp = c + i * ldc + j;
            if (accumulate) acc = V::add(acc, V::load(cp));
            V::store(cp, acc);
        }
        for (; j < n; ++j) {
            T s(0);
            for (std::size_t p = 0; p < k; ++p) s += a[i * a_rs + p * a_cs] * b[p * ldb + j];
            T* cp = c + i * ldc + j;
            *cp = accumulate ? *cp + s : s;
        }
    }
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
             T* c, std::size_t ldc, bool accumulate) {
    gemm_bcast<T>(m, n, k, a, lda, 1, b, ldb, c, ldc, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
             T* c, std::size_t ldc, bool accumulate) {
    gemm_bcast<T>(m, n, k, a, 1, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    auto a0 = V::zero(), a1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * W <= n; i += 2 * W) {
        a0 = V::fma(V::load(x + i), V::load(y + i), a0);
        a1 = V::fma(V::load(x + i + W), V::load(y + i + W), a1);
    }
    for (; i + W <= n; i += W) a0 = V::fma(V::load(x + i), V::load(y + i), a0);
    T s = V::hsum(V::add(a0, a1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

// One row of A against four rows of B per pass; each A vector is loaded once.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
             T* c, std::size_t ldc, bool accumulate) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * lda;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const T* b0 = b + j * ldb;
            const T* b1 = b0 + ldb;
            const T* b2 = b1 + ldb;
            const T* b3 = b2 + ldb;
            auto s0 = V::zero(), s1 = V::zero(), s2 = V::zero(), s3 = V::zero();
            std::size_t p = 0;
            for (; p + W <= k; p += W) {
                const auto av = V::load(ai + p);
                s0 = V::fma(av, V::load(b0 + p), s0);
                s1 = V::fma(av, V::load(b1 + p), s1);
                s2 = V::fma(av, V::load(b2 + p), s2);
                s3 = V::fma(av, V::load(b3 + p), s3);
            }
            T r[4] = {V::hsum(s0), V::hsum(s1), V::hsum(s2), V::hsum(s3)};
            for (; p < k; ++p) {
                r[0] += ai[p] * b0[p];
                r[1] += ai[p] * b1[p];
                r[2] += ai[p] * b2[p];
                r[3] += ai[p] * b3[p];
            }
            for (std::size_t q = 0; q < 4; ++q) {
                T* cp = c + i * ldc + j + q;
                *cp = accumulate ? *cp + r[q] : r[q];
            }
        }
        for (; j < n; ++j) {
            const T s = dot<T>(k, ai, b + j * ldb);
            T* cp = c + i * ldc + j;
            *cp = accumulate ? *cp + s : s;
        }
    }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    const auto av = V::broadcast(alpha);
    std::size_t i = 0;
    for (; i + W <= n; i += W) V::store(y + i, V::fma(av, V::load(x + i), V::load(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

// Fixed channel counts below one vector width: unrolled at compile time.
template <typename T, std::size_t C>
void gather4_fixed(std::size_t entries, const std::uint32_t* src, const T* w, const T* x, T* out) {
    for (std::size_t e = 0; e < entries; ++e) {
        const T* x0 = x + src[4 * e] * C;
        const T* x1 = x + src[4 * e + 1] * C;
        const T* x2 = x + src[4 * e + 2] * C;
        const T* x3 = x + src[4 * e + 3] * C;
        const T w0 = w[4 * e], w1 = w[4 * e + 1], w2 = w[4 * e + 2], w3 = w[4 * e + 3];
        T* o = out + e * C;
        for (std::size_t j = 0; j < C; ++j) o[j] = w0 * x0[j] + w1 * x1[j] + w2 * x2[j] + w3 * x3[j];
    }
}

template <typename T, std::size_t C>
void scatter4_fixed(std::size_t entries, const std::uint32_t* src, const T* w, const T* g, T* gx) {
    for (std::size_t e = 0; e < entries; ++e) {
        const T* ge = g + e * C;
        for (int q = 0; q < 4; ++q) {
            T* dst = gx + src[4 * e + q] * C;
            const T wq = w[4 * e + q];
            for (std::size_t j = 0; j < C; ++j) dst[j] += wq * ge[j];
        }
    }
}

template <typename T>
void gather4(std::size_t entries, const std::uint32_t* src, const T* w, const T* x, std::size_t c, T* out) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    switch (c) {
        case 1: return gather4_fixed<T, 1>(entries, src, w, x, out);
        case 2: return gather4_fixed<T, 2>(entries, src, w, x, out);
        case 3: return gather4_fixed<T, 3>(entries, src, w, x, out);
        case 4: return gather4_fixed<T, 4>(entries, src, w, x, out);
        default: break;
    }
    for (std::size_t e = 0; e < entries; ++e) {
        const T* x0 = x + src[4 * e] * c;
        const T* x1 = x + src[4 * e + 1] * c;
        const T* x2 = x + src[4 * e + 2] * c;
        const T* x3 = x + src[4 * e + 3] * c;
        const T w0 = w[4 * e], w1 = w[4 * e + 1], w2 = w[4 * e + 2], w3 = w[4 * e + 3];
        T* o = out + e * c;
        std::size_t j = 0;
        if (c >= W) {
            const auto v0 = V::broadcast(w0), v1 = V::broadcast(w1), v2 = V::broadcast(w2), v3 = V::broadcast(w3);
            for (; j + W <= c; j += W) {
                auto acc = V::fma(v0, V::load(x0 + j), V::zero());
                acc = V::fma(v1, V::load(x1 + j), acc);
                acc = V::fma(v2, V::load(x2 + j), acc);
                acc = V::fma(v3, V::load(x3 + j), acc);
                V::store(o + j, acc);
            }
        }
        for (; j < c; ++j) o[j] = w0 * x0[j] + w1 * x1[j] + w2 * x2[j] + w3 * x3[j];
    }
}

template <typename T>
void scatter4(std::size_t entries, const std::uint32_t* src, const T* w, const T* g, std::size_t c, T* gx) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    switch (c) {
        case 1: return scatter4_fixed<T, 1>(entries, src, w, g, gx);
        case 2: return scatter4_fixed<T, 2>(entries, src, w, g, gx);
        case 3: return scatter4_fixed<T, 3>(entries, src, w, g, gx);
        case 4: return scatter4_fixed<T, 4>(entries, src, w, g, gx);
        default: break;
    }
    for (std::size_t e = 0; e < entries; ++e) {
        const T* ge = g + e * c;
        for (int q = 0; q < 4; ++q) {
            T* dst = gx + src[4 * e + q] * c;
            const T wq = w[4 * e + q];
            std::size_t j = 0;
            if (c >= W) {
                const auto vq = V::broadcast(wq);
                for (; j + W <= c; j += W) V::store(dst + j, V::fma(vq, V::load(ge + j), V::load(dst + j)));
            }
            for (; j < c; ++j) dst[j] += wq * ge[j];
        }
    }
}

template <typename T>
constexpr KernelTable<T> make_table() {
    return {Isa::avx2, &gemm_nn<T>, &gemm_tn<T>, &gemm_nt<T>, &axpy<T>, &dot<T>, &gather4<T>, &scatter4<T>};
}

constexpr KernelTable<float> kFloat = make_table<float>();
constexpr KernelTable<double> kDouble = make_table<double>();

}  // namespace

const KernelTable<float>* avx2_table_float_unchecked() { return &kFloat; }
const KernelTable<double>* avx2_table_double_unchecked() { return &kDouble; }

}  // namespace odvqa::kernels

#else

namespace odvqa::kernels {
const KernelTable<float>* avx2_table_float_unchecked() { return nullptr; }
const KernelTable<double>* avx2_table_double_unchecked() { return nullptr; }
}  // namespace odvqa::kernels

#endif
