// SPDX-License-Identifier: Apache-2.0
// Pose-DiT: spatial-temporal diffusion transformer over pick/place pose plans.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "posemoe/pose.hpp"
#include "posemoe/rectflow.hpp"

namespace posemoe {

/// Task template id plus a fixed-width scene description. The model turns
/// both into the single condition token.
struct Condition {
    std::size_t template_id = 0;
    std::vector<double> features;
};

struct PoseDiTConfig {
    std::size_t n_blocks = 3;
    std::size_t hidden = 256;
    std::size_t n_heads = 4;
    std::size_t ffn_mult = 4;
    /// Padded plan length; shorter plans carry a validity mask.
    std::size_t horizon = 4;
    std::size_t n_templates = 9;
    std::size_t template_dim = 16;
    std::size_t scene_features = 16;
    bool temporal_attention = true;
    /// Adds the condition token to the adaLN input as well (DiT class
    /// conditioning); cross-attention always sees it.
    bool adaln_condition = false;
    FlowSchedule schedule;

    std::size_t cond_dim() const { return template_dim + scene_features; }
    std::size_t token_count() const { return horizon * kRoles; }
    std::size_t flat_dim() const { return horizon * kRoles * kPoseDims; }
    void validate() const;
};

template <typename T>
struct AttentionWeights {
    Linear<T> wq, wk, wv, wo;

    void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Sublayers in order: spatial self-attention, cross-attention, temporal
/// self-attention, cross-attention, FFN. Each reads shift/scale/gate from
/// adaLN-zero modulation (5·3 chunks of width hidden).
template <typename T>
struct STDiTBlock {
    Linear<T> ada;
    AttentionWeights<T> spatial, cross1, temporal, cross2;
    FeedForward<T> ffn;

    void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Constant sinusoidal features of t·1000, [N, dim].
template <typename T>
Tensor<T> timestep_features(std::span<const T> t, std::size_t dim);

template <typename T>
class PoseDiT {
public:
    PoseDiT() = default;
    PoseDiT(const PoseDiTConfig& config, Rng& rng);

    const PoseDiTConfig& config() const { return config_; }

    /// x [B, horizon·2·6] normalised, t [B], conds B entries; `valid` holds
    /// B·horizon flags (empty = all valid). Returns the velocity, same shape.
    Tensor<T> forward(const Tensor<T>& x, std::span<const T> t, const std::vector<Condition>& conds,
                      std::span<const std::uint8_t> valid = {}) const;

    /// MLP(timestep_features) [B, hidden].
    Tensor<T> time_embedding(std::span<const T> t) const;
    /// SiLU of the time embedding (plus the condition token when enabled).
    Tensor<T> modulation_input(std::span<const T> t, const Tensor<T>& cond_token) const;
    /// Projected condition token [B, hidden].
    Tensor<T> condition_token(const std::vector<Condition>& conds) const;
    /// One block on tokens [B·horizon·2, hidden] ordered (b, t, role).
    Tensor<T> block_forward(std::size_t index, const Tensor<T>& tokens, const Tensor<T>& mod_input,
                            const Tensor<T>& cond_token, std::span<const std::uint8_t> valid) const;

    /// Velocity function over a fixed batch of conditions.
    VelocityFn<T> fn(std::vector<Condition> conds, std::vector<std::uint8_t> valid = {}) const;

    ParamList<T> parameters() const;
    std::vector<STDiTBlock<T>>& blocks() { return blocks_; }
    const std::vector<STDiTBlock<T>>& blocks() const { return blocks_; }
    Tensor<T>& role_embedding() { return role_emb_; }

    /// forward() calls since construction or the last reset.
    std::size_t evaluations() const { return *evaluations_; }
    void reset_evaluations() { *evaluations_ = 0; }

private:
    PoseDiTConfig config_;
    Linear<T> embed_;
    Tensor<T> role_emb_;
    Tensor<T> time_pos_;
    Linear<T> time1_, time2_;
    Tensor<T> template_table_;
    Linear<T> cond_proj_;
    std::vector<STDiTBlock<T>> blocks_;
    LayerNorm<T> final_norm_;
    Linear<T> head_;
    std::shared_ptr<std::size_t> evaluations_ = std::make_shared<std::size_t>(0);
};

/// A demonstration in model layout.
struct PoseDemo {
    Condition cond;
    /// Normalised [horizon·2·6], zero past the valid steps.
    std::vector<double> target;
    /// horizon flags.
    std::vector<std::uint8_t> valid;
};

/// Pads `traj` to `horizon` steps and normalises it.
PoseDemo make_demo(Condition cond, const PoseTrajectory& traj, const Workspace& ws, std::size_t horizon);

struct PoseTrainConfig {
    std::size_t steps = 5000;
    std::size_t batch_size = 64;
    double lr = 6e-3;
    std::size_t warmup_steps = 100;
    double weight_decay = 0.0;
    double grad_clip = 1.0;
    std::size_t log_every = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

template <typename T>
struct PoseTrainResult {
    PoseDiT<T> model;
    /// (step, mean loss since the previous entry).
    std::vector<std::pair<std::size_t, double>> loss_curve;
    double first_loss = 0.0;
    double final_loss = 0.0;
};

/// Masked rectified-flow loss: Σ over valid coordinates of the squared
/// velocity error, divided by the batch size.
template <typename T>
Tensor<T> posedit_loss(const PoseDiT<T>& model, const std::vector<const PoseDemo*>& batch, Rng& noise_rng,
                       Rng& t_rng);

template <typename T>
PoseTrainResult<T> train_posedit(const std::vector<PoseDemo>& demos, const PoseDiTConfig& model_cfg,
                                 const PoseTrainConfig& cfg);

struct PosePrediction {
    PoseTrajectory trajectory;
    bool clamped = false;
    std::size_t evaluations = 0;
};

/// Euler-samples one plan per condition from z0 drawn with Rng(seeds[i]),
/// keeps the first `horizons[i]` steps, denormalises, clamps positions into
/// the workspace and wraps angles. Rows are independent of batch makeup.
template <typename T>
std::vector<PosePrediction> predict_trajectories(const PoseDiT<T>& model, const std::vector<Condition>& conds,
                                                 const std::vector<std::size_t>& horizons,
                                                 const std::vector<std::uint64_t>& seeds, std::size_t n_steps,
                                                 const Workspace& ws);

template <typename T>
PosePrediction predict_trajectory(const PoseDiT<T>& model, const Condition& cond, std::size_t horizon,
                                  std::uint64_t seed, std::size_t n_steps, const Workspace& ws);

struct TrajectoryMeta {
    std::string task_id;
    std::uint64_t seed = 0;
    std::size_t n_steps = 0;
    bool clamped = false;
};

/// {"task_id", "seed", "n_steps", "clamped", "poses": [[T][2][6]]}
std::string trajectory_to_json(const PoseTrajectory& traj, const TrajectoryMeta& meta);
PoseTrajectory trajectory_from_json(const std::string& text, TrajectoryMeta* meta = nullptr);

}  // namespace posemoe
