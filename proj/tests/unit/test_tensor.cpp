// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "posemoe/errors.hpp"
#include "posemoe/grad_suite.hpp"
#include "posemoe/ops.hpp"

namespace {

using namespace posemoe;
using Td = Tensor<double>;
using Tf = Tensor<float>;

TEST(Softmax, SymmetricPair) {
    auto y = softmax(Td({2}, {0.0, 0.0}));
    EXPECT_DOUBLE_EQ(y.data()[0], 0.5);
    EXPECT_DOUBLE_EQ(y.data()[1], 0.5);
}

TEST(Softmax, LogThreeVersusZero) {
    auto y = softmax(Td({2}, {std::log(3.0), 0.0}));
    EXPECT_NEAR(y.data()[0], 0.75, 1e-15);
    EXPECT_NEAR(y.data()[1], 0.25, 1e-15);
}

TEST(Softmax, RowsAreSimplexVectors) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t rows = 1 + rng.below(6), cols = 1 + rng.below(9);
        Tf x({rows, cols});
        rng.fill_uniform<float>(x.mutable_data(), -30.0, 30.0);
        auto y = softmax(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                ASSERT_GE(y.data()[r * cols + c], 0.0f);
                s += y.data()[r * cols + c];
            }
            ASSERT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(LayerNorm, ConstantVectorNormalisesToZero) {
    auto y = layer_norm(Td({1, 5}, {3.3, 3.3, 3.3, 3.3, 3.3}));
    for (double v : y.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Backward, SumGivesOnes) {
    Td x({3}, {1.0, -2.0, 5.0}, true);
    backward(sum(x));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquares) {
    Td x({2}, {1.0, 2.0}, true);
    backward(sum(mul(x, x)));
    EXPECT_EQ(x.grad()[0], 2.0);
    EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, CallerZerosLeafGradients) {
    Td x({2}, {1.0, 2.0}, true);
    backward(sum(x));
    backward(sum(x));
    EXPECT_EQ(x.grad()[0], 2.0);
    x.zero_grad();
    backward(sum(x));
    EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Backward, RejectsNonScalarLoss) {
    Td x({2}, {1.0, 2.0}, true);
    EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
}

TEST(Backward, InferenceBuildsNoGraph) {
    Td x({2}, {1.0, 2.0});
    auto y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Errors, ShapeMismatchNamesOpAndShapes) {
    try {
        add(Td({2, 3}), Td({3, 2}));
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("add"), std::string::npos);
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[3,2]"), std::string::npos);
    }
    EXPECT_THROW(matmul(Td({2, 3}), Td({2, 3})), ShapeError);
    EXPECT_THROW(linear(Td({4, 3}), Td({2, 5})), ShapeError);
}

TEST(Errors, NonFiniteInputRejected) {
    const double inf = std::numeric_limits<double>::infinity();
    EXPECT_THROW(Td({2}, {1.0, inf}), NonFiniteError);
    EXPECT_THROW(scale(Td({1}, std::vector<double>{1e308}), 1e10), NonFiniteError);
}

TEST(Attention, CausalMaskHidesFuture) {
    Rng rng(1);
    const std::size_t s = 4, d = 4;
    Td q({1, s, d}), k({1, s, d}), v({1, s, d});
    for (auto* t : {&q, &k, &v}) rng.fill_normal<double>(t->mutable_data());
    auto base = attention(q, k, v, 2, true);
    // Perturb the last key/value; earlier queries must be unaffected.
    k.mutable_data()[(s - 1) * d] += 1.0;
    v.mutable_data()[(s - 1) * d + 1] += 1.0;
    auto pert = attention(q, k, v, 2, true);
    for (std::size_t i = 0; i < (s - 1) * d; ++i) EXPECT_EQ(base.data()[i], pert.data()[i]);
}

TEST(Attention, SingleKeyReturnsValue) {
    Td q({1, 3, 2}, {1, 2, 3, 4, 5, 6}), k({1, 1, 2}, {0.5, -0.5}), v({1, 1, 2}, {7, 9});
    auto y = attention(q, k, v, 1, false);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(y.data()[2 * i], 7.0, 1e-12);
        EXPECT_NEAR(y.data()[2 * i + 1], 9.0, 1e-12);
    }
}

TEST(Attention, FullyMaskedQueryIsAnError) {
    Td q({1, 1, 2}), k({1, 2, 2}), v({1, 2, 2});
    std::vector<std::uint8_t> mask{0, 0};
    EXPECT_THROW(attention<double>(q, k, v, 1, false, mask), ShapeError);
}

TEST(Sinusoidal, ZeroInputIsSinZeroCosOne) {
    std::vector<double> t{0.0};
    auto f = sinusoidal_features<double>(t, 8);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(f.data()[i], 0.0);
    for (std::size_t i = 4; i < 8; ++i) EXPECT_EQ(f.data()[i], 1.0);
}

TEST(Layout, PermuteRoundTrip) {
    Rng rng(2);
    Td x({2, 3, 4, 5});
    rng.fill_normal<double>(x.mutable_data());
    auto y = permute(permute(x, {2, 0, 3, 1}), {1, 3, 0, 2});
    EXPECT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x.data()[i], y.data()[i]);
}

TEST(Determinism, ForwardIsBitIdentical) {
    Rng rng(9);
    Tf a({17, 33}), b({33, 21});
    rng.fill_normal<float>(a.mutable_data());
    rng.fill_normal<float>(b.mutable_data());
    auto y1 = softmax(matmul(a, b)), y2 = softmax(matmul(a, b));
    for (std::size_t i = 0; i < y1.numel(); ++i) ASSERT_EQ(y1.data()[i], y2.data()[i]);
}

TEST(GradSuite, EveryPrimitivePassesFiniteDifferences) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto results = run_primitive_grad_suite(seed);
        EXPECT_GE(results.size(), 30u);
        for (const auto& r : results) {
            EXPECT_TRUE(r.report.passed) << r.op << " worst rel err " << r.report.worst_rel_error << " seed " << seed;
        }
    }
}

TEST(GradSuite, InjectedFaultIsDetected) {
    debug::inject_backward_fault("silu");
    auto results = run_primitive_grad_suite(1);
    debug::inject_backward_fault(nullptr);
    bool silu_failed = false;
    for (const auto& r : results) {
        if (r.op == "silu") silu_failed = !r.report.passed;
        if (r.op == "add") EXPECT_TRUE(r.report.passed);
    }
    EXPECT_TRUE(silu_failed);
}

}  // namespace
