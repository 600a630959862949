#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

// Dense inner-loop kernels used by the tensor engine. Every kernel has a scalar
// reference implementation; wider instruction-set variants are selected at
// runtime and must agree with the reference up to floating-point reassociation.

namespace odvqa::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

template <typename T>
struct KernelTable {
    Isa isa;
    // C[M,N] (+)= A[M,K] * B[K,N]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                    std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
    // C[M,N] (+)= A^T * B with A stored as [K,M]
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                    std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
    // C[M,N] (+)= A * B^T with B stored as [N,K]
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                    std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
    // y += alpha * x
    void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
    T (*dot)(std::size_t n, const T* x, const T* y);
    // Channels-last bilinear gather over `entries` four-corner entries:
    // out[e * c + j] = sum_q w[4e + q] * x[src[4e + q] * c + j]
    void (*gather4)(std::size_t entries, const std::uint32_t* src, const T* w, const T* x, std::size_t c, T* out);
    // Adjoint of gather4: gx[src[4e + q] * c + j] += w[4e + q] * g[e * c + j]
    void (*scatter4)(std::size_t entries, const std::uint32_t* src, const T* w, const T* g, std::size_t c, T* gx);
};

template <typename T>
const KernelTable<T>& scalar_table();

/// nullptr when the variant was not compiled in or the CPU lacks the instructions.
template <typename T>
const KernelTable<T>* avx2_table();

/// The table used by the tensor engine. Resolved once from CPU features; can be
/// pinned with force_isa (tests) or the ODVQA_ISA=scalar environment variable.
template <typename T>
const KernelTable<T>& active();

Isa active_isa();
void force_isa(Isa isa);

}  // namespace odvqa::kernels
