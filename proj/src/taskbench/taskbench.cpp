// SPDX-License-Identifier: Apache-2.0

#include "posemoe/taskbench.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "json.hpp"

#include "posemoe/errors.hpp"
#include "posemoe/report.hpp"

namespace posemoe {

TaskKind parse_task_kind(const std::string& name) {
    if (name == "zone") return TaskKind::Zone;
    if (name == "bowl") return TaskKind::Bowl;
    if (name == "stacking") return TaskKind::Stacking;
    throw ConfigError("unknown task kind '" + name + "' (expected zone, bowl or stacking)");
}

std::string task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::Zone: return "zone";
        case TaskKind::Bowl: return "bowl";
        case TaskKind::Stacking: return "stacking";
    }
    return "?";
}

std::string TaskInstance::id() const { return task_kind_name(kind) + "-" + std::to_string(seed); }

std::string violation_name(Violation v) {
    switch (v) {
        case Violation::None: return "none";
        case Violation::PickMiss: return "pick_miss";
        case Violation::PlaceOutOfGoal: return "place_out_of_goal";
    }
    return "?";
}

namespace {

constexpr double kEdgeMargin = 0.1;
constexpr double kBlockSpacing = 2.0 * kBlockSide;
constexpr double kGoalClearance = 0.1;
constexpr double kSlotOffset = 0.025;

double rect_distance(double x, double y, const Goal& g) {
    const double dx = std::max(std::abs(x - g.cx) - g.half_x, 0.0);
    const double dy = std::max(std::abs(y - g.cy) - g.half_y, 0.0);
    return std::hypot(dx, dy);
}

double norm_coord(double v, const Workspace& ws, std::size_t d) {
    return 2.0 * (v - ws.lo[d]) / (ws.hi[d] - ws.lo[d]) - 1.0;
}

double norm_length(double v, const Workspace& ws, std::size_t d) { return 2.0 * v / (ws.hi[d] - ws.lo[d]); }

}  // namespace

TaskInstance generate_task(TaskKind kind, std::uint64_t seed, double difficulty) {
    if (!(difficulty >= 0.0) || !std::isfinite(difficulty)) throw ConfigError("generate_task: difficulty must be >= 0");
    TaskInstance task;
    task.kind = kind;
    task.seed = seed;
    task.difficulty = difficulty;
    const Workspace& ws = task.workspace;
    Rng rng(Rng::derive(seed, 0x7a5c00 + static_cast<std::uint64_t>(kind)));
    const std::size_t n = kMinBlocks + rng.below(kMaxBlocks - kMinBlocks + 1);
    const double clearance = kGoalClearance * (1.0 + difficulty);
    auto lo = [&](std::size_t d, double margin) { return ws.lo[d] + margin; };
    auto hi = [&](std::size_t d, double margin) { return ws.hi[d] - margin; };

    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<Block> blocks;
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i) {
            Block b;
            b.id = static_cast<int>(i);
            b.pose.x = rng.uniform(lo(0, kEdgeMargin), hi(0, kEdgeMargin));
            b.pose.y = rng.uniform(lo(1, kEdgeMargin), hi(1, kEdgeMargin));
            b.pose.z = kTableZ;
            b.pose.yaw = wrap_angle(rng.uniform(-std::numbers::pi, std::numbers::pi));
            for (const auto& o : blocks) {
                if (std::hypot(b.pose.x - o.pose.x, b.pose.y - o.pose.y) <= kBlockSpacing) ok = false;
            }
            blocks.push_back(b);
        }
        if (!ok) continue;

        Goal g;
        switch (kind) {
            case TaskKind::Zone: {
                g.half_x = rng.uniform(0.06, 0.1);
                g.half_y = rng.uniform(0.06, 0.1);
                g.cx = rng.uniform(lo(0, 0.05 + g.half_x), hi(0, 0.05 + g.half_x));
                g.cy = rng.uniform(lo(1, 0.05 + g.half_y), hi(1, 0.05 + g.half_y));
                for (const auto& b : blocks) ok = ok && rect_distance(b.pose.x, b.pose.y, g) >= clearance;
                break;
            }
            case TaskKind::Bowl: {
                g.radius = rng.uniform(0.07, 0.1);
                g.cx = rng.uniform(lo(0, 0.05 + g.radius), hi(0, 0.05 + g.radius));
                g.cy = rng.uniform(lo(1, 0.05 + g.radius), hi(1, 0.05 + g.radius));
                for (const auto& b : blocks) {
                    ok = ok && std::hypot(b.pose.x - g.cx, b.pose.y - g.cy) - g.radius >= clearance;
                }
                break;
            }
            case TaskKind::Stacking: {
                g.base_id = 0;
                g.cx = blocks[0].pose.x;
                g.cy = blocks[0].pose.y;
                for (std::size_t i = 1; i < blocks.size(); ++i) {
                    ok = ok && std::hypot(blocks[i].pose.x - g.cx, blocks[i].pose.y - g.cy) >= clearance;
                }
                break;
            }
        }
        if (!ok) continue;
        task.blocks = std::move(blocks);
        task.goal = g;
        task.horizon = kind == TaskKind::Stacking ? n - 1 : n;
        task.template_id = static_cast<std::size_t>(kind) * 3 + (n - kMinBlocks);
        return task;
    }
    throw Error("generate_task: no valid " + task_kind_name(kind) + " layout for seed " + std::to_string(seed) +
                " within 1000 draws (difficulty " + std::to_string(difficulty) + ")");
}

Pose6D goal_slot(const TaskInstance& task, std::size_t k) {
    if (k >= task.horizon) throw Error("goal_slot: step " + std::to_string(k) + " beyond horizon");
    Pose6D p;
    if (task.kind == TaskKind::Stacking) {
        const auto& base = task.blocks.at(static_cast<std::size_t>(task.goal.base_id)).pose;
        p.x = base.x;
        p.y = base.y;
        p.z = base.z + static_cast<double>(k + 1) * kBlockSide;
        return p;
    }
    static const double sx[] = {-1.0, 1.0, -1.0, 1.0};
    static const double sy[] = {-1.0, -1.0, 1.0, 1.0};
    p.x = task.goal.cx + sx[k % 4] * kSlotOffset;
    p.y = task.goal.cy + sy[k % 4] * kSlotOffset;
    p.z = kTableZ;
    return p;
}

PoseTrajectory oracle_policy(const TaskInstance& task) {
    PoseTrajectory traj;
    const std::size_t first = task.kind == TaskKind::Stacking ? 1 : 0;
    for (std::size_t k = 0; k < task.horizon; ++k) {
        const auto& b = task.blocks.at(first + k).pose;
        Pose6D pick;
        pick.x = b.x;
        pick.y = b.y;
        pick.z = b.z;
        traj.steps.push_back({pick, goal_slot(task, k)});
    }
    return traj;
}

Condition task_condition(const TaskInstance& task) {
    const Workspace& ws = task.workspace;
    Condition c;
    c.template_id = task.template_id;
    c.features.assign(kSceneFeatures, 0.0);
    for (std::size_t i = 0; i < task.blocks.size() && i < kMaxBlocks; ++i) {
        c.features[3 * i] = 1.0;
        c.features[3 * i + 1] = norm_coord(task.blocks[i].pose.x, ws, 0);
        c.features[3 * i + 2] = norm_coord(task.blocks[i].pose.y, ws, 1);
    }
    double* g = c.features.data() + 3 * kMaxBlocks;
    g[0] = norm_coord(task.goal.cx, ws, 0);
    g[1] = norm_coord(task.goal.cy, ws, 1);
    switch (task.kind) {
        case TaskKind::Zone:
            g[2] = norm_length(task.goal.half_x, ws, 0);
            g[3] = norm_length(task.goal.half_y, ws, 1);
            break;
        case TaskKind::Bowl:
            g[2] = norm_length(task.goal.radius, ws, 0);
            g[3] = norm_length(task.goal.radius, ws, 1);
            break;
        case TaskKind::Stacking:
            break;
    }
    return c;
}

EpisodeResult evaluate(const PoseTrajectory& traj, const TaskInstance& task, const Tolerances& tol) {
    if (traj.horizon() != task.horizon) {
        throw Error("evaluate: plan has " + std::to_string(traj.horizon()) + " steps, task " + task.id() + " needs " +
                    std::to_string(task.horizon));
    }
    std::vector<Pose6D> pose;
    std::vector<bool> available;
    for (const auto& b : task.blocks) {
        pose.push_back(b.pose);
        available.push_back(b.id != task.goal.base_id);
    }
    EpisodeResult r;
    std::size_t stacked = 0;
    for (std::size_t k = 0; k < traj.horizon(); ++k) {
        const Pose6D& pick = traj.steps[k][kPick];
        const Pose6D& place = traj.steps[k][kPlace];
        StepError e;
        std::size_t chosen = pose.size();
        double best = 0.0;
        for (std::size_t i = 0; i < pose.size(); ++i) {
            if (!available[i]) continue;
            const double d = std::sqrt(std::pow(pick.x - pose[i].x, 2) + std::pow(pick.y - pose[i].y, 2) +
                                       std::pow(pick.z - pose[i].z, 2));
            if (chosen == pose.size() || d < best) {
                chosen = i;
                best = d;
            }
        }
        e.pick = best;
        e.yaw = std::abs(wrap_angle(place.yaw));
        bool placed;
        if (task.kind == TaskKind::Stacking) {
            const auto& base = task.blocks.at(static_cast<std::size_t>(task.goal.base_id)).pose;
            const double slot_z = base.z + static_cast<double>(stacked + 1) * kBlockSide;
            const double dxy = std::hypot(place.x - base.x, place.y - base.y), dz = std::abs(place.z - slot_z);
            e.place = std::hypot(dxy, dz);
            placed = dxy <= tol.place_xy && dz <= tol.place_z;
        } else if (task.kind == TaskKind::Zone) {
            e.place = std::hypot(place.x - task.goal.cx, place.y - task.goal.cy);
            placed = std::abs(place.x - task.goal.cx) <= task.goal.half_x &&
                     std::abs(place.y - task.goal.cy) <= task.goal.half_y;
        } else {
            e.place = std::hypot(place.x - task.goal.cx, place.y - task.goal.cy);
            placed = e.place <= task.goal.radius;
        }
        r.errors.push_back(e);
        if (chosen == pose.size() || best > tol.pick) {
            r.violation = Violation::PickMiss;
            r.failed_step = k;
            return r;
        }
        if (!placed) {
            r.violation = Violation::PlaceOutOfGoal;
            r.failed_step = k;
            return r;
        }
        pose[chosen] = place;
        available[chosen] = false;
        ++stacked;
    }
    r.success = true;
    r.failed_step = traj.horizon();
    return r;
}

BatchPolicy oracle_batch_policy() {
    return [](const std::vector<TaskInstance>& tasks, const std::vector<std::uint64_t>&) {
        std::vector<PolicyOutput> out;
        for (const auto& t : tasks) out.push_back({oracle_policy(t), 0});
        return out;
    };
}

template <typename T>
BatchPolicy posedit_batch_policy(const PoseDiT<T>& model, std::size_t n_steps) {
    return [model, n_steps](const std::vector<TaskInstance>& tasks, const std::vector<std::uint64_t>& seeds) {
        std::vector<Condition> conds;
        std::vector<std::size_t> horizons;
        for (const auto& t : tasks) {
            if (!(t.workspace == tasks.front().workspace)) throw Error("posedit policy: tasks differ in workspace");
            conds.push_back(task_condition(t));
            horizons.push_back(t.horizon);
        }
        std::vector<PolicyOutput> out;
        if (tasks.empty()) return out;
        for (auto& p : predict_trajectories(model, conds, horizons, seeds, n_steps, tasks.front().workspace)) {
            out.push_back({std::move(p.trajectory), p.evaluations, p.clamped});
        }
        return out;
    };
}

BenchReport run_benchmark(const BatchPolicy& policy, const BenchConfig& cfg) {
    if (!cfg.episodes_per_kind || !cfg.batch_size) throw ConfigError("benchmark: episodes and batch size must be positive");
    BenchReport rep;
    double wall_total = 0.0, evals_total = 0.0, rate_total = 0.0;
    for (TaskKind kind : kAllTaskKinds) {
        std::size_t successes = 0;
        double wall = 0.0, evals = 0.0;
        for (std::size_t start = 0; start < cfg.episodes_per_kind; start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, cfg.episodes_per_kind - start);
            std::vector<TaskInstance> tasks;
            std::vector<std::uint64_t> noise_seeds;
            for (std::size_t i = 0; i < count; ++i) {
                const std::uint64_t s = cfg.seed_begin + start + i;
                tasks.push_back(generate_task(kind, s, cfg.difficulty));
                noise_seeds.push_back(Rng::derive(s, 0x5eed00 + static_cast<std::uint64_t>(kind)));
            }
            const auto t0 = std::chrono::steady_clock::now();
            auto plans = policy(tasks, noise_seeds);
            wall += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            if (plans.size() != count) throw Error("benchmark: policy returned the wrong number of plans");
            for (std::size_t i = 0; i < count; ++i) {
                EpisodeRecord rec{kind, tasks[i].seed, noise_seeds[i], evaluate(plans[i].trajectory, tasks[i], cfg.tol),
                                  std::move(plans[i])};
                successes += rec.result.success;
                evals += static_cast<double>(rec.plan.evaluations);
                rep.episodes.push_back(std::move(rec));
            }
        }
        const double n = static_cast<double>(cfg.episodes_per_kind);
        BenchRow row{task_kind_name(kind), static_cast<double>(successes) / n, cfg.episodes_per_kind, cfg.infer_steps,
                     wall / n, evals / n};
        rate_total += row.success_rate;
        wall_total += wall;
        evals_total += evals;
        rep.rows.push_back(row);
    }
    const double kinds = static_cast<double>(std::size(kAllTaskKinds));
    const double all = kinds * static_cast<double>(cfg.episodes_per_kind);
    rep.rows.push_back({"avg", rate_total / kinds, cfg.episodes_per_kind * std::size(kAllTaskKinds), cfg.infer_steps,
                        wall_total / all, evals_total / all});
    return rep;
}

void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows) {
    CsvWriter csv(path);
    csv.header({"name", "success_rate", "n_episodes", "infer_steps", "wall_ms_per_episode", "evals_per_episode"});
    for (const auto& r : rows) {
        csv.row({r.name, format_real(r.success_rate), std::to_string(r.n_episodes), std::to_string(r.infer_steps),
                 format_real(r.wall_ms_per_episode), format_real(r.evals_per_episode)});
    }
}

void write_episode_csv(const std::filesystem::path& path, const std::vector<EpisodeRecord>& episodes) {
    CsvWriter csv(path);
    csv.header({"kind", "episode_seed", "success", "first_violation", "pick_errors", "place_errors"});
    for (const auto& e : episodes) {
        std::string picks, places;
        for (std::size_t i = 0; i < e.result.errors.size(); ++i) {
            if (i) {
                picks += ';';
                places += ';';
            }
            picks += format_real(e.result.errors[i].pick);
            places += format_real(e.result.errors[i].place);
        }
        csv.row({task_kind_name(e.kind), std::to_string(e.episode_seed), e.result.success ? "1" : "0",
                 violation_name(e.result.violation), picks, places});
    }
}

std::string task_to_json(const TaskInstance& task) {
    nlohmann::ordered_json j;
    j["kind"] = task_kind_name(task.kind);
    j["seed"] = task.seed;
    j["difficulty"] = task.difficulty;
    j["workspace"] = {{"lo", task.workspace.lo}, {"hi", task.workspace.hi}};
    j["blocks"] = nlohmann::ordered_json::array();
    for (const auto& b : task.blocks) {
        j["blocks"].push_back({{"id", b.id}, {"pose", b.pose.to_array()}, {"side", b.side}});
    }
    j["goal"] = {{"cx", task.goal.cx},         {"cy", task.goal.cy},         {"half_x", task.goal.half_x},
                 {"half_y", task.goal.half_y}, {"radius", task.goal.radius}, {"base_id", task.goal.base_id}};
    j["horizon"] = task.horizon;
    j["template_id"] = task.template_id;
    return j.dump(2);
}

TaskInstance task_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        TaskInstance t;
        t.kind = parse_task_kind(j.at("kind").get<std::string>());
        t.seed = j.at("seed").get<std::uint64_t>();
        t.difficulty = j.at("difficulty").get<double>();
        t.workspace.lo = j.at("workspace").at("lo").get<std::array<double, 3>>();
        t.workspace.hi = j.at("workspace").at("hi").get<std::array<double, 3>>();
        for (const auto& b : j.at("blocks")) {
            Block blk;
            blk.id = b.at("id").get<int>();
            blk.pose = Pose6D::from_array(b.at("pose").get<std::vector<double>>());
            blk.side = b.at("side").get<double>();
            t.blocks.push_back(blk);
        }
        const auto& g = j.at("goal");
        t.goal = {g.at("cx").get<double>(),     g.at("cy").get<double>(),     g.at("half_x").get<double>(),
                  g.at("half_y").get<double>(), g.at("radius").get<double>(), g.at("base_id").get<int>()};
        t.horizon = j.at("horizon").get<std::size_t>();
        t.template_id = j.at("template_id").get<std::size_t>();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("task json: ") + e.what());
    }
}

std::vector<PoseDemo> make_bench_demos(std::uint64_t seed_begin, std::uint64_t seed_end, double difficulty) {
    std::vector<PoseDemo> demos;
    for (TaskKind kind : kAllTaskKinds) {
        for (std::uint64_t s = seed_begin; s < seed_end; ++s) {
            const auto task = generate_task(kind, s, difficulty);
            demos.push_back(make_demo(task_condition(task), oracle_policy(task), task.workspace, kBenchHorizon));
        }
    }
    return demos;
}

PoseDiTConfig bench_posedit_config(std::size_t hidden, std::size_t n_blocks, std::size_t n_heads) {
    PoseDiTConfig c;
    c.hidden = hidden;
    c.n_blocks = n_blocks;
    c.n_heads = n_heads;
    c.horizon = kBenchHorizon;
    c.n_templates = kBenchTemplates;
    c.scene_features = kSceneFeatures;
    c.adaln_condition = true;
    return c;
}

template BatchPolicy posedit_batch_policy(const PoseDiT<float>&, std::size_t);
template BatchPolicy posedit_batch_policy(const PoseDiT<double>&, std::size_t);

}  // namespace posemoe
