// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "posemoe/errors.hpp"
#include "posemoe/taskbench.hpp"

namespace {

using namespace posemoe;

TEST(TaskGen, Deterministic) {
    for (TaskKind k : kAllTaskKinds) {
        for (std::uint64_t s = 0; s < 50; ++s) EXPECT_EQ(generate_task(k, s), generate_task(k, s));
    }
    EXPECT_NE(generate_task(TaskKind::Zone, 1), generate_task(TaskKind::Zone, 2));
}

TEST(TaskGen, LayoutInvariants) {
    for (TaskKind k : kAllTaskKinds) {
        for (std::uint64_t s = 0; s < 300; ++s) {
            auto t = generate_task(k, s);
            const auto& ws = t.workspace;
            ASSERT_GE(t.blocks.size(), kMinBlocks);
            ASSERT_LE(t.blocks.size(), kMaxBlocks);
            for (std::size_t i = 0; i < t.blocks.size(); ++i) {
                for (std::size_t j = i + 1; j < t.blocks.size(); ++j) {
                    EXPECT_GT(std::hypot(t.blocks[i].pose.x - t.blocks[j].pose.x, t.blocks[i].pose.y - t.blocks[j].pose.y),
                              kBlockSide);
                }
            }
            const std::size_t moves = k == TaskKind::Stacking ? t.blocks.size() - 1 : t.blocks.size();
            EXPECT_EQ(t.horizon, moves);
            EXPECT_EQ(t.template_id, static_cast<std::size_t>(k) * 3 + t.blocks.size() - 2);
            if (k == TaskKind::Zone) {
                EXPECT_GE(t.goal.cx - t.goal.half_x, ws.lo[0]);
                EXPECT_LE(t.goal.cx + t.goal.half_x, ws.hi[0]);
                EXPECT_GE(t.goal.cy - t.goal.half_y, ws.lo[1]);
                EXPECT_LE(t.goal.cy + t.goal.half_y, ws.hi[1]);
            }
            if (k == TaskKind::Bowl) {
                EXPECT_GE(t.goal.cx - t.goal.radius, ws.lo[0]);
                EXPECT_LE(t.goal.cy + t.goal.radius, ws.hi[1]);
                for (const auto& b : t.blocks) {
                    EXPECT_GE(std::hypot(b.pose.x - t.goal.cx, b.pose.y - t.goal.cy) - t.goal.radius, 0.1);
                }
            }
        }
    }
}

TEST(TaskGen, StackingThreeBlocksNeedsTwoMoves) {
    int found = 0;
    for (std::uint64_t s = 0; s < 100 && found < 5; ++s) {
        auto t = generate_task(TaskKind::Stacking, s);
        if (t.blocks.size() != 3) continue;
        ++found;
        EXPECT_EQ(t.horizon, 2u);
    }
    EXPECT_EQ(found, 5);
}

TEST(TaskGen, AbsurdDifficultyFails) {
    EXPECT_THROW(generate_task(TaskKind::Zone, 1, 50.0), Error);
    EXPECT_THROW(generate_task(TaskKind::Zone, 1, -1.0), ConfigError);
}

TEST(Oracle, SucceedsOnThousandTasksPerKind) {
    for (TaskKind k : kAllTaskKinds) {
        for (std::uint64_t s = 0; s < 1000; ++s) {
            auto t = generate_task(k, s);
            auto r = evaluate(oracle_policy(t), t);
            ASSERT_TRUE(r.success) << t.id() << " " << violation_name(r.violation);
        }
    }
}

TEST(Oracle, BowlPlacesInsideRadius) {
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto t = generate_task(TaskKind::Bowl, s);
        for (const auto& step : oracle_policy(t).steps) {
            EXPECT_LE(std::hypot(step[kPlace].x - t.goal.cx, step[kPlace].y - t.goal.cy), t.goal.radius);
        }
    }
}

TEST(Oracle, StackHeightGrowsBySide) {
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto t = generate_task(TaskKind::Stacking, s);
        auto plan = oracle_policy(t);
        double z = t.blocks[0].pose.z;
        for (const auto& step : plan.steps) {
            EXPECT_NEAR(step[kPlace].z - z, kBlockSide, 1e-15);
            z = step[kPlace].z;
        }
    }
}

TEST(Evaluate, PlaceOutsideZone) {
    auto t = generate_task(TaskKind::Zone, 3);
    auto plan = oracle_policy(t);
    plan.steps[0][kPlace].x = t.goal.cx + t.goal.half_x + 0.2;
    auto r = evaluate(plan, t);
    EXPECT_FALSE(r.success);
    EXPECT_EQ(r.violation, Violation::PlaceOutOfGoal);
    EXPECT_EQ(r.failed_step, 0u);
}

TEST(Evaluate, PickMissAndHorizonMismatch) {
    auto t = generate_task(TaskKind::Bowl, 4);
    auto plan = oracle_policy(t);
    plan.steps.back()[kPick].x += 0.03;
    auto r = evaluate(plan, t);
    EXPECT_EQ(r.violation, Violation::PickMiss);
    EXPECT_EQ(r.failed_step, t.horizon - 1);
    plan.steps.pop_back();
    EXPECT_THROW(evaluate(plan, t), Error);
}

TEST(Evaluate, StackingSlotTolerances) {
    auto t = generate_task(TaskKind::Stacking, 5);
    auto plan = oracle_policy(t);
    plan.steps[0][kPlace].z += 0.009;
    EXPECT_TRUE(evaluate(plan, t).success);
    plan.steps[0][kPlace].z += 0.002;
    EXPECT_EQ(evaluate(plan, t).violation, Violation::PlaceOutOfGoal);
    plan = oracle_policy(t);
    plan.steps[0][kPlace].x += 0.019;
    EXPECT_TRUE(evaluate(plan, t).success);
    plan.steps[0][kPlace].x += 0.002;
    EXPECT_EQ(evaluate(plan, t).violation, Violation::PlaceOutOfGoal);
}

TEST(Evaluate, EquidistantPickTakesLowestId) {
    TaskInstance t;
    t.kind = TaskKind::Zone;
    t.blocks = {Block{0, {0.5, 0.25, kTableZ, 0, 0, 0}}, Block{1, {0.5625, 0.25, kTableZ, 0, 0, 0}}};
    t.goal.cx = 0.5;
    t.goal.cy = 0.75;
    t.goal.half_x = t.goal.half_y = 0.1;
    t.horizon = 2;
    Tolerances tol;
    tol.pick = 0.04;
    Pose6D between{0.53125, 0.25, kTableZ, 0, 0, 0};
    Pose6D slot{0.5, 0.75, kTableZ, 0, 0, 0};
    PoseTrajectory plan;
    plan.steps.push_back({between, slot});
    plan.steps.push_back({t.blocks[1].pose, slot});
    EXPECT_TRUE(evaluate(plan, t, tol).success);
    plan.steps[1][kPick] = t.blocks[0].pose;
    // Block 0 has already been moved, so its start pose is empty.
    EXPECT_EQ(evaluate(plan, t, tol).violation, Violation::PickMiss);
}

TEST(Evaluate, TighterToleranceNeverRescuesFailure) {
    Rng rng(7);
    for (int i = 0; i < 600; ++i) {
        const TaskKind k = kAllTaskKinds[i % 3];
        auto t = generate_task(k, static_cast<std::uint64_t>(i));
        auto plan = oracle_policy(t);
        for (auto& s : plan.steps) {
            for (auto& p : s) {
                p.x += rng.uniform(-0.03, 0.03);
                p.y += rng.uniform(-0.03, 0.03);
                p.z += rng.uniform(-0.015, 0.015);
            }
        }
        Tolerances loose;
        Tolerances tight{loose.pick * 0.5, loose.place_xy * 0.5, loose.place_z * 0.5};
        if (!evaluate(plan, t, loose).success) EXPECT_FALSE(evaluate(plan, t, tight).success);
    }
}

TEST(TaskJson, RoundTrip) {
    for (TaskKind k : kAllTaskKinds) {
        auto t = generate_task(k, 42, 0.5);
        EXPECT_EQ(task_from_json(task_to_json(t)), t);
    }
    EXPECT_THROW(task_from_json("{\"kind\": \"zone\"}"), Error);
}

TEST(Condition, SceneFeatures) {
    auto t = generate_task(TaskKind::Bowl, 9);
    auto c = task_condition(t);
    EXPECT_EQ(c.template_id, t.template_id);
    ASSERT_EQ(c.features.size(), kSceneFeatures);
    for (std::size_t i = 0; i < kMaxBlocks; ++i) EXPECT_EQ(c.features[3 * i], i < t.blocks.size() ? 1.0 : 0.0);
    EXPECT_DOUBLE_EQ(c.features[1], 2.0 * t.blocks[0].pose.x - 1.0);
    EXPECT_DOUBLE_EQ(c.features[12], 2.0 * t.goal.cx - 1.0);
}

TEST(Benchmark, OracleScoresOne) {
    BenchConfig cfg;
    cfg.episodes_per_kind = 40;
    auto rep = run_benchmark(oracle_batch_policy(), cfg);
    ASSERT_EQ(rep.rows.size(), 4u);
    EXPECT_EQ(rep.rows[0].name, "zone");
    EXPECT_EQ(rep.rows[3].name, "avg");
    for (const auto& r : rep.rows) EXPECT_EQ(r.success_rate, 1.0);
    EXPECT_EQ(rep.rows[3].n_episodes, 120u);
}

PoseDiT<float> random_policy_model() {
    Rng rng(3);
    PoseDiT<float> m(bench_posedit_config(32, 1, 4), rng);
    for (auto& p : m.parameters()) {
        if (p.name.find(".ada.") != std::string::npos || p.name.starts_with("head.")) {
            rng.fill_normal<float>(p.tensor.mutable_data(), 0.2);
        }
    }
    return m;
}

TEST(Benchmark, UntrainedModelRarelySucceeds) {
    Rng rng(4);
    PoseDiT<float> fresh(bench_posedit_config(32, 1, 4), rng);
    BenchConfig cfg;
    auto rep = run_benchmark(posedit_batch_policy(fresh, 4), cfg);
    EXPECT_LT(rep.rows[0].success_rate, 0.05);
    EXPECT_EQ(rep.rows[0].evals_per_episode, 4.0);
}

TEST(Benchmark, ResultsIndependentOfBatching) {
    auto m = random_policy_model();
    BenchConfig a;
    a.episodes_per_kind = 30;
    a.batch_size = 30;
    BenchConfig b = a;
    b.batch_size = 7;
    auto ra = run_benchmark(posedit_batch_policy(m, 4), a);
    auto rb = run_benchmark(posedit_batch_policy(m, 4), b);
    ASSERT_EQ(ra.episodes.size(), rb.episodes.size());
    for (std::size_t i = 0; i < ra.episodes.size(); ++i) {
        EXPECT_EQ(ra.episodes[i].result.success, rb.episodes[i].result.success);
        ASSERT_EQ(ra.episodes[i].result.errors.size(), rb.episodes[i].result.errors.size());
        for (std::size_t k = 0; k < ra.episodes[i].result.errors.size(); ++k) {
            EXPECT_EQ(ra.episodes[i].result.errors[k].pick, rb.episodes[i].result.errors[k].pick);
            EXPECT_EQ(ra.episodes[i].result.errors[k].place, rb.episodes[i].result.errors[k].place);
        }
    }
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TEST(Benchmark, CsvLayout) {
    const auto dir = std::filesystem::temp_directory_path() / "posemoe_bench_test";
    std::filesystem::create_directories(dir);
    BenchConfig cfg;
    cfg.episodes_per_kind = 5;
    auto rep = run_benchmark(oracle_batch_policy(), cfg);
    write_bench_csv(dir / "bench.csv", rep.rows);
    write_episode_csv(dir / "episodes.csv", rep.episodes);
    auto bench = slurp(dir / "bench.csv");
    EXPECT_EQ(bench.substr(0, bench.find('\n')),
              "name,success_rate,n_episodes,infer_steps,wall_ms_per_episode,evals_per_episode");
    EXPECT_NE(bench.find("\nzone,1,5,4,"), std::string::npos);
    EXPECT_NE(bench.find("\navg,1,15,4,"), std::string::npos);
    auto eps = slurp(dir / "episodes.csv");
    EXPECT_EQ(std::count(eps.begin(), eps.end(), '\n'), 16);
    EXPECT_NE(eps.find("zone,10000,1,none,"), std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST(Demos, CoverEveryKind) {
    auto demos = make_bench_demos(0, 20);
    ASSERT_EQ(demos.size(), 60u);
    for (const auto& d : demos) {
        EXPECT_EQ(d.target.size(), kBenchHorizon * 12);
        std::size_t valid = 0;
        for (auto v : d.valid) valid += v;
        EXPECT_GE(valid, 1u);
        for (double v : d.target) {
            EXPECT_GE(v, -1.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

}  // namespace
