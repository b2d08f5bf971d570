// SPDX-License-Identifier: Apache-2.0
// SIMD kernels against the scalar reference, over random extents that hit
// every vector-width remainder.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "posemoe/kernels.hpp"
#include "posemoe/rng.hpp"

namespace {

using posemoe::Rng;
namespace k = posemoe::kernels;

template <typename T>
std::vector<T> random_vec(Rng& rng, std::size_t n) {
    std::vector<T> v(n);
    rng.fill_uniform<T>(std::span<T>(v), -1.0, 1.0);
    return v;
}

template <typename T>
double tol() {
    return std::is_same_v<T, float> ? 2e-5 : 1e-13;
}

template <typename T>
class KernelEquivalence : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(KernelEquivalence, Precisions);

TYPED_TEST(KernelEquivalence, VectorKernelsMatchScalar) {
    using T = TypeParam;
    const auto* simd = k::avx2_table<T>();
    if (!simd) GTEST_SKIP() << "AVX2 unavailable";
    const auto& ref = k::scalar_table<T>();
    Rng rng(7);
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 33u, 64u, 100u, 257u}) {
        auto x = random_vec<T>(rng, n), y = random_vec<T>(rng, n);
        const double scale = std::max<double>(1.0, static_cast<double>(n));
        EXPECT_NEAR(simd->dot(n, x.data(), y.data()), ref.dot(n, x.data(), y.data()), tol<T>() * scale) << n;
        EXPECT_NEAR(simd->sum(n, x.data()), ref.sum(n, x.data()), tol<T>() * scale) << n;

        std::vector<T> a(n), b(n);
        simd->add(n, x.data(), y.data(), a.data());
        ref.add(n, x.data(), y.data(), b.data());
        EXPECT_EQ(a, b);
        simd->mul(n, x.data(), y.data(), a.data());
        ref.mul(n, x.data(), y.data(), b.data());
        EXPECT_EQ(a, b);
        simd->scale(n, T(0.37), x.data(), a.data());
        ref.scale(n, T(0.37), x.data(), b.data());
        EXPECT_EQ(a, b);

        auto ya = y, yb = y;
        simd->axpy(n, T(-1.25), x.data(), ya.data());
        ref.axpy(n, T(-1.25), x.data(), yb.data());
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(ya[i], yb[i], tol<T>());
    }
}

TYPED_TEST(KernelEquivalence, GemmMatchesScalarOnRandomShapes) {
    using T = TypeParam;
    const auto* simd = k::avx2_table<T>();
    if (!simd) GTEST_SKIP() << "AVX2 unavailable";
    const auto& ref = k::scalar_table<T>();
    Rng rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t m = 1 + rng.below(13), n = 1 + rng.below(40), kk = 1 + rng.below(70);
        const bool accumulate = trial % 2 == 1;
        auto a = random_vec<T>(rng, m * kk), b = random_vec<T>(rng, kk * n), c0 = random_vec<T>(rng, m * n);
        auto c1 = c0, c2 = c0;
        simd->gemm(m, n, kk, a.data(), kk, b.data(), n, c1.data(), n, accumulate);
        ref.gemm(m, n, kk, a.data(), kk, b.data(), n, c2.data(), n, accumulate);
        for (std::size_t i = 0; i < m * n; ++i) {
            ASSERT_NEAR(c1[i], c2[i], tol<T>() * static_cast<double>(kk)) << m << "x" << n << "x" << kk;
        }
    }
}

// A row's result must not depend on which other rows share the call; the MoE
// dispatch path relies on this.
TYPED_TEST(KernelEquivalence, GemmRowsIndependentOfBatchComposition) {
    using T = TypeParam;
    Rng rng(5);
    const auto& K = k::active<T>();
    const std::size_t m = 9, n = 37, kk = 29;
    auto a = random_vec<T>(rng, m * kk), b = random_vec<T>(rng, kk * n);
    std::vector<T> full(m * n);
    K.gemm(m, n, kk, a.data(), kk, b.data(), n, full.data(), n, false);
    for (std::size_t r = 0; r < m; ++r) {
        std::vector<T> one(n);
        K.gemm(1, n, kk, a.data() + r * kk, kk, b.data(), n, one.data(), n, false);
        for (std::size_t j = 0; j < n; ++j) ASSERT_EQ(one[j], full[r * n + j]);
    }
}

TEST(KernelDispatch, BackendSelection) {
    const auto before = k::current_backend();
    EXPECT_TRUE(k::select_backend(k::Backend::Scalar));
    EXPECT_STREQ(k::active<float>().name, "scalar");
    EXPECT_STREQ(k::active<double>().name, "scalar");
    if (k::cpu_has_avx2()) {
        EXPECT_TRUE(k::select_backend(k::Backend::Avx2));
        EXPECT_STREQ(k::active<float>().name, "avx2");
    } else {
        EXPECT_FALSE(k::select_backend(k::Backend::Avx2));
    }
    k::select_backend(before);
}

}  // namespace
