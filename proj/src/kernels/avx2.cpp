// SPDX-License-Identifier: Apache-2.0
// AVX2 + FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma and must only be entered after a runtime CPU check.
//
// gemm invariant: every output element is produced by the same sequence
// acc = 0; acc = fma(a[i,p], b[p,j], acc) for p = 0..k-1; c = (c +) acc,
// whether it lands in a 4-row block, a single-row block or the scalar tail.
// A row's result therefore does not depend on which other rows share the call.

#include "posemoe/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace posemoe::kernels {
namespace {

struct F32 {
    using T = float;
    using V = __m256;
    static constexpr std::size_t W = 8;
    static V load(const T* p) { return _mm256_loadu_ps(p); }
    static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
    static V set1(T x) { return _mm256_set1_ps(x); }
    static V zero() { return _mm256_setzero_ps(); }
    static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
    static V add(V a, V b) { return _mm256_add_ps(a, b); }
    static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
    static T hsum(V v) {
        __m128 lo = _mm256_castps256_ps128(v);
        __m128 hi = _mm256_extractf128_ps(v, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 shuf = _mm_movehdup_ps(lo);
        __m128 sums = _mm_add_ps(lo, shuf);
        shuf = _mm_movehl_ps(shuf, sums);
        sums = _mm_add_ss(sums, shuf);
        return _mm_cvtss_f32(sums);
    }
};

struct F64 {
    using T = double;
    using V = __m256d;
    static constexpr std::size_t W = 4;
    static V load(const T* p) { return _mm256_loadu_pd(p); }
    static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
    static V set1(T x) { return _mm256_set1_pd(x); }
    static V zero() { return _mm256_setzero_pd(); }
    static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
    static V add(V a, V b) { return _mm256_add_pd(a, b); }
    static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
    static T hsum(V v) {
        __m128d lo = _mm256_castpd256_pd128(v);
        __m128d hi = _mm256_extractf128_pd(v, 1);
        lo = _mm_add_pd(lo, hi);
        __m128d high64 = _mm_unpackhi_pd(lo, lo);
        return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
    }
};

// MR rows × (NV·W) columns register block.
template <class S, std::size_t MR, std::size_t NV>
inline void gemm_block(std::size_t k, const typename S::T* a, std::size_t lda, const typename S::T* b,
                       std::size_t ldb, typename S::T* c, std::size_t ldc, bool accumulate) {
    using V = typename S::V;
    V acc[MR][NV];
    for (std::size_t r = 0; r < MR; ++r)
        for (std::size_t v = 0; v < NV; ++v) acc[r][v] = S::zero();
    for (std::size_t p = 0; p < k; ++p) {
        V bv[NV];
        for (std::size_t v = 0; v < NV; ++v) bv[v] = S::load(b + p * ldb + v * S::W);
        for (std::size_t r = 0; r < MR; ++r) {
            const V av = S::set1(a[r * lda + p]);
            for (std::size_t v = 0; v < NV; ++v) acc[r][v] = S::fmadd(av, bv[v], acc[r][v]);
        }
    }
    for (std::size_t r = 0; r < MR; ++r) {
        for (std::size_t v = 0; v < NV; ++v) {
            typename S::T* dst = c + r * ldc + v * S::W;
            S::store(dst, accumulate ? S::add(S::load(dst), acc[r][v]) : acc[r][v]);
        }
    }
}

template <class S, std::size_t NV>
inline void gemm_column_panel(std::size_t m, std::size_t k, const typename S::T* a, std::size_t lda,
                              const typename S::T* b, std::size_t ldb, typename S::T* c, std::size_t ldc,
                              bool accumulate) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) gemm_block<S, 4, NV>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
    for (; i < m; ++i) gemm_block<S, 1, NV>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

template <class S>
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const typename S::T* a, std::size_t lda,
               const typename S::T* b, std::size_t ldb, typename S::T* c, std::size_t ldc, bool accumulate) {
    using T = typename S::T;
    constexpr std::size_t W = S::W;
    std::size_t j = 0;
    for (; j + 2 * W <= n; j += 2 * W) gemm_column_panel<S, 2>(m, k, a, lda, b + j, ldb, c + j, ldc, accumulate);
    for (; j + W <= n; j += W) gemm_column_panel<S, 1>(m, k, a, lda, b + j, ldb, c + j, ldc, accumulate);
    for (; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) {
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[i * lda + p], b[p * ldb + j], acc);
            c[i * ldc + j] = accumulate ? c[i * ldc + j] + acc : acc;
        }
    }
}

template <class S>
typename S::T dot_avx2(std::size_t n, const typename S::T* x, const typename S::T* y) {
    using T = typename S::T;
    constexpr std::size_t W = S::W;
    auto a0 = S::zero(), a1 = S::zero(), a2 = S::zero(), a3 = S::zero();
    std::size_t i = 0;
    for (; i + 4 * W <= n; i += 4 * W) {
        a0 = S::fmadd(S::load(x + i), S::load(y + i), a0);
        a1 = S::fmadd(S::load(x + i + W), S::load(y + i + W), a1);
        a2 = S::fmadd(S::load(x + i + 2 * W), S::load(y + i + 2 * W), a2);
        a3 = S::fmadd(S::load(x + i + 3 * W), S::load(y + i + 3 * W), a3);
    }
    for (; i + W <= n; i += W) a0 = S::fmadd(S::load(x + i), S::load(y + i), a0);
    T acc = S::hsum(S::add(S::add(a0, a1), S::add(a2, a3)));
    for (; i < n; ++i) acc = std::fma(x[i], y[i], acc);
    return acc;
}

template <class S>
void axpy_avx2(std::size_t n, typename S::T a, const typename S::T* x, typename S::T* y) {
    constexpr std::size_t W = S::W;
    const auto av = S::set1(a);
    std::size_t i = 0;
    for (; i + W <= n; i += W) S::store(y + i, S::fmadd(av, S::load(x + i), S::load(y + i)));
    for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

template <class S>
void add_avx2(std::size_t n, const typename S::T* x, const typename S::T* y, typename S::T* out) {
    constexpr std::size_t W = S::W;
    std::size_t i = 0;
    for (; i + W <= n; i += W) S::store(out + i, S::add(S::load(x + i), S::load(y + i)));
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

template <class S>
void mul_avx2(std::size_t n, const typename S::T* x, const typename S::T* y, typename S::T* out) {
    constexpr std::size_t W = S::W;
    std::size_t i = 0;
    for (; i + W <= n; i += W) S::store(out + i, S::mul(S::load(x + i), S::load(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

template <class S>
void scale_avx2(std::size_t n, typename S::T a, const typename S::T* x, typename S::T* out) {
    constexpr std::size_t W = S::W;
    const auto av = S::set1(a);
    std::size_t i = 0;
    for (; i + W <= n; i += W) S::store(out + i, S::mul(av, S::load(x + i)));
    for (; i < n; ++i) out[i] = a * x[i];
}

template <class S>
typename S::T sum_avx2(std::size_t n, const typename S::T* x) {
    using T = typename S::T;
    constexpr std::size_t W = S::W;
    auto a0 = S::zero(), a1 = S::zero();
    std::size_t i = 0;
    for (; i + 2 * W <= n; i += 2 * W) {
        a0 = S::add(a0, S::load(x + i));
        a1 = S::add(a1, S::load(x + i + W));
    }
    for (; i + W <= n; i += W) a0 = S::add(a0, S::load(x + i));
    T acc = S::hsum(S::add(a0, a1));
    for (; i < n; ++i) acc += x[i];
    return acc;
}

template <class S>
constexpr KernelTable<typename S::T> make_avx2_table() {
    return KernelTable<typename S::T>{"avx2",       &gemm_avx2<S>, &dot_avx2<S>,   &axpy_avx2<S>,
                                      &add_avx2<S>, &mul_avx2<S>,  &scale_avx2<S>, &sum_avx2<S>};
}

constexpr KernelTable<float> kAvx2F32 = make_avx2_table<F32>();
constexpr KernelTable<double> kAvx2F64 = make_avx2_table<F64>();

}  // namespace

namespace detail {
const KernelTable<float>* avx2_table_f32() { return &kAvx2F32; }
const KernelTable<double>* avx2_table_f64() { return &kAvx2F64; }
}  // namespace detail

}  // namespace posemoe::kernels
