// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "posemoe/kernels.hpp"

namespace posemoe::kernels {

#ifdef POSEMOE_HAVE_AVX2
namespace detail {
const KernelTable<float>* avx2_table_f32();
const KernelTable<double>* avx2_table_f64();
}  // namespace detail
#endif

bool cpu_has_avx2() {
#if defined(POSEMOE_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
    static const bool has = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return has;
#else
    return false;
#endif
}

namespace {

Backend initial_backend() {
    if (const char* env = std::getenv("POSEMOE_KERNELS")) {
        if (std::string_view(env) == "scalar") return Backend::Scalar;
    }
    return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& backend_slot() {
    static std::atomic<Backend> slot{initial_backend()};
    return slot;
}

}  // namespace

template <>
const KernelTable<float>* avx2_table<float>() {
#ifdef POSEMOE_HAVE_AVX2
    return cpu_has_avx2() ? detail::avx2_table_f32() : nullptr;
#else
    return nullptr;
#endif
}

template <>
const KernelTable<double>* avx2_table<double>() {
#ifdef POSEMOE_HAVE_AVX2
    return cpu_has_avx2() ? detail::avx2_table_f64() : nullptr;
#else
    return nullptr;
#endif
}

template <typename T>
const KernelTable<T>& active() {
    if (backend_slot().load(std::memory_order_relaxed) == Backend::Avx2) {
        if (const auto* t = avx2_table<T>()) return *t;
    }
    return scalar_table<T>();
}

template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

bool select_backend(Backend backend) {
    if (backend == Backend::Auto) {
        backend_slot().store(cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar);
        return true;
    }
    if (backend == Backend::Avx2 && !cpu_has_avx2()) return false;
    backend_slot().store(backend);
    return true;
}

Backend current_backend() { return backend_slot().load(); }

std::string_view backend_name(Backend backend) {
    switch (backend) {
        case Backend::Auto: return "auto";
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
    }
    return "unknown";
}

}  // namespace posemoe::kernels
