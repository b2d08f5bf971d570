// SPDX-License-Identifier: Apache-2.0
// Reference kernels. Straight loops, no intrinsics; every SIMD variant is
// checked against these.

#include "posemoe/kernels.hpp"

namespace posemoe::kernels {
namespace {

template <typename T>
void gemm_ref(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
              std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        if (!accumulate) {
            for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
        }
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = a[i * lda + p];
            const T* brow = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

template <typename T>
T dot_ref(std::size_t n, const T* x, const T* y) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <typename T>
void axpy_ref(std::size_t n, T a, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void add_ref(std::size_t n, const T* x, const T* y, T* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

template <typename T>
void mul_ref(std::size_t n, const T* x, const T* y, T* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

template <typename T>
void scale_ref(std::size_t n, T a, const T* x, T* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

template <typename T>
T sum_ref(std::size_t n, const T* x) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <typename T>
constexpr KernelTable<T> make_scalar_table() {
    return KernelTable<T>{"scalar",     &gemm_ref<T>,  &dot_ref<T>,   &axpy_ref<T>,
                          &add_ref<T>,  &mul_ref<T>,   &scale_ref<T>, &sum_ref<T>};
}

constexpr KernelTable<float> kScalarF32 = make_scalar_table<float>();
constexpr KernelTable<double> kScalarF64 = make_scalar_table<double>();

}  // namespace

template <>
const KernelTable<float>& scalar_table<float>() {
    return kScalarF32;
}
template <>
const KernelTable<double>& scalar_table<double>() {
    return kScalarF64;
}

}  // namespace posemoe::kernels
