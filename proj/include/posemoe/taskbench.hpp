// SPDX-License-Identifier: Apache-2.0
// Synthetic tabletop pick-and-place tasks, oracle demonstrations and a
// geometric success evaluator.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "posemoe/posedit.hpp"

namespace posemoe {

enum class TaskKind { Zone = 0, Bowl = 1, Stacking = 2 };

TaskKind parse_task_kind(const std::string& name);
std::string task_kind_name(TaskKind kind);
inline constexpr TaskKind kAllTaskKinds[] = {TaskKind::Zone, TaskKind::Bowl, TaskKind::Stacking};

inline constexpr double kTableZ = 0.05;
inline constexpr double kBlockSide = 0.04;
inline constexpr std::size_t kMinBlocks = 2;
inline constexpr std::size_t kMaxBlocks = 4;
/// Padded plan length shared by every task kind.
inline constexpr std::size_t kBenchHorizon = 4;
inline constexpr std::size_t kBenchTemplates = 9;
/// 4 block slots × (present, x, y) + 4 goal values.
inline constexpr std::size_t kSceneFeatures = 16;

inline constexpr std::uint64_t kTrainSeedBegin = 0;
inline constexpr std::uint64_t kTrainSeedEnd = 10000;
inline constexpr std::uint64_t kEvalSeedBegin = 10000;
inline constexpr std::uint64_t kEvalSeedEnd = 11000;

struct Block {
    int id = 0;
    Pose6D pose;
    double side = kBlockSide;
    bool operator==(const Block&) const = default;
};

/// Zone: axis-aligned rectangle (center, half extents). Bowl: disc (center,
/// radius). Stacking: the base block stays put and the rest go on top of it
/// in id order.
struct Goal {
    double cx = 0.0, cy = 0.0;
    double half_x = 0.0, half_y = 0.0;
    double radius = 0.0;
    int base_id = -1;
    bool operator==(const Goal&) const = default;
};

struct TaskInstance {
    TaskKind kind = TaskKind::Zone;
    Workspace workspace;
    std::vector<Block> blocks;
    Goal goal;
    std::size_t horizon = 0;
    std::size_t template_id = 0;
    std::uint64_t seed = 0;
    double difficulty = 0.0;

    std::string id() const;
    bool operator==(const TaskInstance&) const = default;
};

/// Deterministic in (kind, seed, difficulty). `difficulty` ≥ 0 widens the
/// required clearance between the goal and every block by a factor of
/// (1 + difficulty). Throws Error when no layout is found within 1000 draws.
TaskInstance generate_task(TaskKind kind, std::uint64_t seed, double difficulty = 0.0);

/// Place slot for the k-th moved block.
Pose6D goal_slot(const TaskInstance& task, std::size_t k);
PoseTrajectory oracle_policy(const TaskInstance& task);

/// Scene description fed to the policy; positions map to [−1, 1].
Condition task_condition(const TaskInstance& task);

struct Tolerances {
    double pick = 0.02;
    double place_xy = 0.02;
    double place_z = 0.01;
};

enum class Violation { None, PickMiss, PlaceOutOfGoal };
std::string violation_name(Violation v);

struct StepError {
    /// Distance from the pick pose to the chosen block center.
    double pick = 0.0;
    /// Distance from the place pose to the goal center (zone, bowl) or the
    /// required stack slot (stacking), in 3D.
    double place = 0.0;
    /// |wrapped place yaw|, radians.
    double yaw = 0.0;
};

struct EpisodeResult {
    bool success = false;
    Violation violation = Violation::None;
    std::size_t failed_step = 0;
    /// Steps up to and including the first failure.
    std::vector<StepError> errors;
};

/// Blocks teleport to their place poses; evaluation stops at the first
/// failing step. Throws Error when the plan length differs from the horizon.
EpisodeResult evaluate(const PoseTrajectory& traj, const TaskInstance& task, const Tolerances& tol = {});

/// Plans for a batch of tasks; returns one trajectory per task together with
/// the number of network evaluations behind each plan.
struct PolicyOutput {
    PoseTrajectory trajectory;
    std::size_t evaluations = 0;
    /// Some position had to be clamped into the workspace.
    bool clamped = false;
};
using BatchPolicy =
    std::function<std::vector<PolicyOutput>(const std::vector<TaskInstance>&, const std::vector<std::uint64_t>&)>;

BatchPolicy oracle_batch_policy();
/// Pose-DiT policy; episode i samples its noise from Rng(seeds[i]).
template <typename T>
BatchPolicy posedit_batch_policy(const PoseDiT<T>& model, std::size_t n_steps);

struct EpisodeRecord {
    TaskKind kind = TaskKind::Zone;
    std::uint64_t episode_seed = 0;
    std::uint64_t noise_seed = 0;
    EpisodeResult result;
    PolicyOutput plan;
};

struct BenchRow {
    std::string name;
    double success_rate = 0.0;
    std::size_t n_episodes = 0;
    std::size_t infer_steps = 0;
    double wall_ms_per_episode = 0.0;
    double evals_per_episode = 0.0;
};

struct BenchConfig {
    std::size_t episodes_per_kind = 200;
    std::uint64_t seed_begin = kEvalSeedBegin;
    std::size_t infer_steps = 4;
    std::size_t batch_size = 50;
    double difficulty = 0.0;
    Tolerances tol;
};

struct BenchReport {
    /// zone, bowl, stacking, avg (macro average).
    std::vector<BenchRow> rows;
    std::vector<EpisodeRecord> episodes;
};

/// Episode seeds seed_begin + i for each kind.
BenchReport run_benchmark(const BatchPolicy& policy, const BenchConfig& cfg);

/// Header: name, success_rate, n_episodes, infer_steps, wall_ms_per_episode, evals_per_episode.
void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows);
/// Header: kind, episode_seed, success, first_violation, pick_errors, place_errors.
void write_episode_csv(const std::filesystem::path& path, const std::vector<EpisodeRecord>& episodes);

std::string task_to_json(const TaskInstance& task);
TaskInstance task_from_json(const std::string& text);

/// Oracle demonstrations for seeds [begin, end) of every kind.
std::vector<PoseDemo> make_bench_demos(std::uint64_t seed_begin, std::uint64_t seed_end, double difficulty = 0.0);

/// Pose-DiT shape matched to the benchmark (horizon, templates, features),
/// with the condition also feeding the adaLN modulation.
PoseDiTConfig bench_posedit_config(std::size_t hidden = 64, std::size_t n_blocks = 3, std::size_t n_heads = 4);

}  // namespace posemoe
