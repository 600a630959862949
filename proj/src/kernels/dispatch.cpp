#include <atomic>
#include <cstdlib>
#include <string>

#include "odvqa/kernels/kernels.hpp"

namespace odvqa::kernels {

const KernelTable<float>* avx2_table_float_unchecked();
const KernelTable<double>* avx2_table_double_unchecked();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    static const bool has = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    }();
    return has;
#else
    return false;
#endif
}

Isa detect() {
    if (const char* env = std::getenv("ODVQA_ISA"); env && std::string(env) == "scalar") return Isa::scalar;
    return (cpu_has_avx2() && avx2_table_float_unchecked()) ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& selected() {
    static std::atomic<Isa> isa{detect()};
    return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
    }
    return "unknown";
}

template <>
const KernelTable<float>* avx2_table<float>() {
    return cpu_has_avx2() ? avx2_table_float_unchecked() : nullptr;
}
template <>
const KernelTable<double>* avx2_table<double>() {
    return cpu_has_avx2() ? avx2_table_double_unchecked() : nullptr;
}

Isa active_isa() { return selected().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
    if (isa == Isa::avx2 && !avx2_table<float>()) isa = Isa::scalar;
    selected().store(isa, std::memory_order_relaxed);
}

template <typename T>
const KernelTable<T>& active() {
    if (active_isa() == Isa::avx2) {
        if (const auto* t = avx2_table<T>()) return *t;
    }
    return scalar_table<T>();
}

template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

}  // namespace odvqa::kernels
