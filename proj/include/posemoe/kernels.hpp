// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>

namespace posemoe::kernels {

enum class Backend { Auto, Scalar, Avx2 };

/// Flat function table for the data-parallel inner loops. Every entry has a
/// scalar reference implementation; SIMD variants must agree with it to
/// rounding (see tests/unit/test_kernels.cpp).
template <typename T>
struct KernelTable {
    const char* name;
    // C[m×n] (+)= A[m×k] · B[k×n], all row-major with leading dimensions.
    void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                 std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
    T (*dot)(std::size_t n, const T* x, const T* y);
    // y += a·x
    void (*axpy)(std::size_t n, T a, const T* x, T* y);
    void (*add)(std::size_t n, const T* x, const T* y, T* out);
    void (*mul)(std::size_t n, const T* x, const T* y, T* out);
    // out = a·x
    void (*scale)(std::size_t n, T a, const T* x, T* out);
    T (*sum)(std::size_t n, const T* x);
};

template <typename T>
const KernelTable<T>& scalar_table();

/// nullptr when the binary was built without AVX2 support or the CPU lacks AVX2+FMA.
template <typename T>
const KernelTable<T>* avx2_table();

/// The table every tensor op uses. Chosen once at startup: AVX2 when the CPU
/// supports it, unless POSEMOE_KERNELS=scalar is set in the environment.
template <typename T>
const KernelTable<T>& active();

/// Overrides runtime selection. Returns false (and changes nothing) when the
/// requested backend is unavailable.
bool select_backend(Backend backend);

Backend current_backend();
std::string_view backend_name(Backend backend);
bool cpu_has_avx2();

}  // namespace posemoe::kernels
