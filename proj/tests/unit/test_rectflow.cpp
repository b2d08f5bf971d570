// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "posemoe/errors.hpp"
#include "posemoe/gradcheck.hpp"
#include "posemoe/rectflow.hpp"

namespace {

using namespace posemoe;
using Td = Tensor<double>;

VelocityFn<double> constant_field(std::vector<double> c) {
    return [c](const Td& z, std::span<const double>) {
        std::vector<double> out(z.numel());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = c[i % c.size()];
        return Td(z.shape(), out);
    };
}

/// Straight path to `a` at unit speed: v = (a − z)/(1 − t).
VelocityFn<double> point_target(double a) {
    return [a](const Td& z, std::span<const double> t) {
        std::vector<double> out(z.numel());
        const std::size_t d = z.dim(1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (a - z.data()[i]) / (1.0 - t[i / d]);
        return Td(z.shape(), out);
    };
}

VelocityFn<double> decay_field() {
    return [](const Td& z, std::span<const double>) { return scale(z, -1.0); };
}

TEST(Interpolate, EndpointsAndMidpoint) {
    Td x0({1, 2}, {0.0, 0.0}), x1({1, 2}, {2.0, 4.0});
    std::vector<double> t{0.25};
    auto xt = interpolate<double>(x0, x1, t);
    EXPECT_EQ(xt.data()[0], 0.5);
    EXPECT_EQ(xt.data()[1], 1.0);
    Rng rng(1);
    Td a({3, 4}), b({3, 4});
    rng.fill_normal<double>(a.mutable_data());
    rng.fill_normal<double>(b.mutable_data());
    std::vector<double> zeros(3, 0.0), ones(3, 1.0);
    auto at0 = interpolate<double>(a, b, zeros), at1 = interpolate<double>(a, b, ones);
    for (std::size_t i = 0; i < 12; ++i) {
        EXPECT_EQ(at0.data()[i], a.data()[i]);
        EXPECT_EQ(at1.data()[i], b.data()[i]);
    }
}

TEST(MakePairs, TimesComeFromTrainingGridAndExcludeOne) {
    Rng rng(2);
    Td x0({500, 2}), x1({500, 2});
    rng.fill_normal<double>(x0.mutable_data());
    rng.fill_normal<double>(x1.mutable_data());
    auto b = make_pairs(x0, x1, rng, FlowSchedule{});
    for (std::size_t i = 0; i < 500; ++i) {
        const double k = b.t[i] * 100.0;
        EXPECT_NEAR(k, std::round(k), 1e-9);
        EXPECT_LT(b.t[i], 1.0);
        EXPECT_GE(b.t[i], 0.0);
        for (std::size_t c = 0; c < 2; ++c) {
            const double expect = b.t[i] * x1.data()[2 * i + c] + (1 - b.t[i]) * x0.data()[2 * i + c];
            EXPECT_NEAR(b.xt.data()[2 * i + c], expect, 1e-12);
            EXPECT_EQ(b.target.data()[2 * i + c], x1.data()[2 * i + c] - x0.data()[2 * i + c]);
        }
    }
}

TEST(Schedule, SharedGridAndValidation) {
    EXPECT_EQ(FlowSchedule::grid(4), (std::vector<double>{0.0, 0.25, 0.5, 0.75}));
    EXPECT_EQ(FlowSchedule::grid(100).back(), 0.99);
    EXPECT_THROW((FlowSchedule{4, 0}).validate(), ConfigError);
    EXPECT_THROW((FlowSchedule{3, 4}).validate(), ConfigError);
}

TEST(RfLoss, ExactFieldGivesZeroAndZeroFieldGivesSquaredNorm) {
    Td x0({1, 2}, {0.0, 0.0}), x1({1, 2}, {1.0, 1.0});
    Rng rng(3);
    auto b = make_pairs(x0, x1, rng, FlowSchedule{});
    EXPECT_EQ(rf_loss(constant_field({1.0, 1.0}), b).item(), 0.0);
    EXPECT_EQ(rf_loss(constant_field({0.0, 0.0}), b).item(), 2.0);
}

TEST(RfLoss, InvariantToBatchOrder) {
    Rng rng(4);
    VelocityMLP<double> mlp({.dim = 2, .hidden = 16, .layers = 3}, rng);
    Td x0({8, 2}), x1({8, 2});
    rng.fill_normal<double>(x0.mutable_data());
    rng.fill_normal<double>(x1.mutable_data());
    auto b = make_pairs(x0, x1, rng, FlowSchedule{});
    std::vector<std::size_t> perm{3, 7, 0, 5, 1, 6, 2, 4};
    FlowBatch<double> p;
    p.xt = gather_rows<double>(b.xt, perm);
    p.target = gather_rows<double>(b.target, perm);
    for (auto i : perm) p.t.push_back(b.t[i]);
    EXPECT_NEAR(rf_loss(mlp.fn(), b).item(), rf_loss(mlp.fn(), p).item(), 1e-13);
}

TEST(RfLoss, GradientMatchesFiniteDifferences) {
    Rng rng(5);
    VelocityMLP<double> mlp({.dim = 2, .hidden = 8, .layers = 3, .time_features = 4}, rng);
    Td x0({6, 2}), x1({6, 2});
    rng.fill_normal<double>(x0.mutable_data());
    rng.fill_normal<double>(x1.mutable_data());
    auto b = make_pairs(x0, x1, rng, FlowSchedule{});
    auto v = mlp.fn();
    auto report = grad_check([=] { return rf_loss(v, b); }, mlp.parameters());
    EXPECT_TRUE(report.passed) << report.worst_rel_error;
}

TEST(Euler, ConstantFieldIsExactForAnyStepCount) {
    Td z0({2, 2}, {0.0, 0.0, 1.0, -2.0});
    for (std::size_t n : {1u, 2u, 4u, 8u, 100u}) {
        auto r = euler_sample(constant_field({0.5, -0.25}), z0, n);
        EXPECT_EQ(r.evaluations, n);
        // n rounded additions; power-of-two step counts are exact.
        const double tol = (n & (n - 1)) ? n * 4.0 * std::numeric_limits<double>::epsilon() : 0.0;
        EXPECT_NEAR(r.z1.data()[0], 0.5, tol);
        EXPECT_NEAR(r.z1.data()[1], -0.25, tol);
        EXPECT_NEAR(r.z1.data()[2], 1.5, tol);
        EXPECT_NEAR(r.z1.data()[3], -2.25, tol);
    }
}

TEST(Euler, PointTargetReachedInFourSteps) {
    Td z0({1, 1}, std::vector<double>{0.0});
    auto r = euler_sample(point_target(1.0), z0, 4, true);
    ASSERT_EQ(r.trajectory.size(), 5u);
    const double expect[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(r.trajectory[k].item(), expect[k], 1e-12);
    EXPECT_LT(std::abs(r.z1.item() - 1.0), 1e-12);
}

TEST(Euler, FirstOrderConvergenceOnDecay) {
    Td z0({1, 1}, std::vector<double>{1.0});
    auto err = [&](std::size_t n) { return std::abs(euler_sample(decay_field(), z0, n).z1.item() - std::exp(-1.0)); };
    const double order = std::log10(err(10) / err(100));
    EXPECT_GE(order, 0.9);
    EXPECT_LE(order, 1.1);
}

TEST(Euler, TranslationEquivariance) {
    Rng rng(6);
    VelocityMLP<double> mlp({.dim = 2, .hidden = 16, .layers = 3}, rng);
    auto v = mlp.fn();
    Td delta({1, 2}, {0.7, -1.3});
    auto shifted = [&](const Td& z, std::span<const double> t) {
        return v(sub(z, repeat_rows(delta, z.dim(0))), t);
    };
    Td z0({5, 2});
    rng.fill_normal<double>(z0.mutable_data());
    auto a = euler_sample(v, z0, 4);
    auto b = euler_sample<double>(shifted, add(z0, repeat_rows(delta, 5)), 4);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(b.z1.data()[i] - delta.data()[i % 2], a.z1.data()[i], 1e-12);
}

TEST(Euler, NonFiniteStateNamesStep) {
    auto blowup = [](const Td& z, std::span<const double> t) {
        if (t[0] >= 0.5) return scale(z, 1e308);
        return z;
    };
    try {
        euler_sample<double>(blowup, Td({1, 1}, std::vector<double>{10.0}), 4);
        FAIL();
    } catch (const NonFiniteError& e) {
        EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
    }
}

TEST(Straightness, ZeroForStraightFields) {
    Rng rng(7);
    Td z0({10, 2});
    rng.fill_normal<double>(z0.mutable_data());
    EXPECT_NEAR(straightness(constant_field({1.0, 2.0}), z0, 50), 0.0, 1e-20);
    EXPECT_NEAR(straightness(point_target(0.3), z0, 100), 0.0, 1e-20);
    EXPECT_THROW(straightness(constant_field({0.0}), z0, 49), ConfigError);
}

TEST(Straightness, PositiveForRandomModel) {
    Rng rng(8);
    VelocityMLP<double> mlp({.dim = 2, .hidden = 32, .layers = 3}, rng);
    Td z0({20, 2});
    rng.fill_normal<double>(z0.mutable_data());
    EXPECT_GT(straightness(mlp.fn(), z0, 50), 0.0);
}

TEST(EnergyDistance, ZeroOnSelfAndSeparatesShifts) {
    Rng rng(9);
    auto a = sample_gaussian(300, 2, rng);
    EXPECT_NEAR(energy_distance(a, a, 2), 0.0, 1e-12);
    auto b = a;
    for (std::size_t i = 0; i < b.size(); i += 2) b[i] += 3.0;
    EXPECT_GT(energy_distance(a, b, 2), 1.0);
    // Two point masses at distance r: 2r − 0 − 0.
    EXPECT_NEAR(energy_distance(std::vector<double>{0.0, 0.0}, std::vector<double>{3.0, 4.0}, 2), 10.0, 1e-12);
}

TEST(ToyData, DeterministicAndShaped) {
    for (auto d : {ToyDataset::EightGaussians, ToyDataset::TwoMoons, ToyDataset::Checkerboard}) {
        Rng a(1), b(1);
        auto x = sample_toy(d, 100, a), y = sample_toy(d, 100, b);
        EXPECT_EQ(x, y);
        EXPECT_EQ(x.size(), 200u);
        EXPECT_EQ(parse_toy_dataset(toy_dataset_name(d)), d);
    }
    Rng rng(2);
    auto pts = sample_toy(ToyDataset::EightGaussians, 2000, rng);
    double mean_r = 0.0;
    for (std::size_t i = 0; i < 2000; ++i) mean_r += std::hypot(pts[2 * i], pts[2 * i + 1]) / 2000.0;
    EXPECT_NEAR(mean_r, 4.0 / std::sqrt(2.0), 0.05);
    EXPECT_THROW(parse_toy_dataset("spirals"), ConfigError);
}

TEST(Train2D, ShortRunLearnsAndIsDeterministic) {
    Flow2DTrainConfig cfg;
    cfg.steps = 300;
    cfg.batch_size = 64;
    cfg.eval_samples = 200;
    cfg.log_every = 100;
    cfg.eval_steps = {1, 4};
    VelocityMLPConfig mlp{.dim = 2, .hidden = 32, .layers = 3};
    auto a = train_flow_2d<float>(ToyDataset::EightGaussians, mlp, cfg);
    auto b = train_flow_2d<float>(ToyDataset::EightGaussians, mlp, cfg);
    ASSERT_EQ(a.loss_curve.size(), 3u);
    EXPECT_LT(a.loss_curve.back().second, a.loss_curve.front().second);
    EXPECT_LT(a.eval[1].energy_distance, a.eval[0].energy_distance);
    for (std::size_t i = 0; i < a.eval.size(); ++i) EXPECT_EQ(a.eval[i].energy_distance, b.eval[i].energy_distance);
    EXPECT_GT(a.noise_floor, 0.0);
}

}  // namespace
