// SPDX-License-Identifier: Apache-2.0
// Rectified-flow pairs, velocity-matching loss, Euler sampling and diagnostics.
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "posemoe/nn.hpp"

namespace posemoe {

struct FlowSchedule {
    std::size_t train_steps = 100;
    std::size_t infer_steps = 4;

    void validate() const;
    /// t_k = k/N for k = 0..N−1; training draws t from grid(train_steps) and
    /// the sampler evaluates at grid(n_steps), so both paths share this.
    static std::vector<double> grid(std::size_t n);
};

/// v(x [N, d], t [N]) → [N, d].
template <typename T>
using VelocityFn = std::function<Tensor<T>(const Tensor<T>&, std::span<const T>)>;

/// A batch of interpolation pairs, row-aligned.
template <typename T>
struct FlowBatch {
    Tensor<T> x0;
    Tensor<T> x1;
    std::vector<T> t;
    /// t·x1 + (1−t)·x0
    Tensor<T> xt;
    /// x1 − x0
    Tensor<T> target;
};

template <typename T>
Tensor<T> interpolate(const Tensor<T>& x0, const Tensor<T>& x1, std::span<const T> t);

/// Independent coupling; t_i drawn uniformly from grid(train_steps).
template <typename T>
FlowBatch<T> make_pairs(const Tensor<T>& x0, const Tensor<T>& x1, Rng& rng, const FlowSchedule& schedule);

/// Mean over rows of ‖(x1 − x0) − v(xt, t)‖².
template <typename T>
Tensor<T> rf_loss(const VelocityFn<T>& v, const FlowBatch<T>& batch);

template <typename T>
struct EulerResult {
    /// z at every grid point including both ends when recorded, else empty.
    std::vector<Tensor<T>> trajectory;
    Tensor<T> z1;
    std::size_t evaluations = 0;
};

/// z_{k+1} = z_k + (1/N)·v(z_k, k/N). Records no graph.
template <typename T>
EulerResult<T> euler_sample(const VelocityFn<T>& v, const Tensor<T>& z0, std::size_t n_steps,
                            bool record_trajectory = false);

/// Mean over trajectories and fine-grid points of ‖v(z_t, t) − (z_1 − z_0)‖².
template <typename T>
double straightness(const VelocityFn<T>& v, const Tensor<T>& z0, std::size_t n_fine = 100);

/// V-statistic estimate of 2E‖X−Y‖ − E‖X−X′‖ − E‖Y−Y′‖ for X [n, d], Y [m, d].
double energy_distance(std::span<const double> x, std::span<const double> y, std::size_t dim);

// ---- 2D toy distributions ---------------------------------------------------

enum class ToyDataset { EightGaussians, TwoMoons, Checkerboard };

ToyDataset parse_toy_dataset(const std::string& name);
std::string toy_dataset_name(ToyDataset d);

/// n points, row-major [n, 2].
std::vector<double> sample_toy(ToyDataset d, std::size_t n, Rng& rng);
std::vector<double> sample_gaussian(std::size_t n, std::size_t dim, Rng& rng);

// ---- MLP velocity model -----------------------------------------------------

struct VelocityMLPConfig {
    std::size_t dim = 2;
    std::size_t hidden = 128;
    std::size_t layers = 3;
    std::size_t time_features = 16;
};

/// SiLU MLP on [x, sinusoidal(t)].
template <typename T>
struct VelocityMLP {
    VelocityMLPConfig config;
    std::vector<Linear<T>> layers;

    VelocityMLP() = default;
    VelocityMLP(const VelocityMLPConfig& cfg, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x, std::span<const T> t) const;
    VelocityFn<T> fn() const;
    ParamList<T> parameters() const;
};

struct Flow2DTrainConfig {
    std::size_t steps = 20000;
    std::size_t batch_size = 256;
    double lr = 1e-3;
    std::size_t warmup_steps = 200;
    double weight_decay = 0.0;
    std::size_t eval_samples = 2000;
    std::vector<std::size_t> eval_steps{1, 4, 100};
    std::size_t log_every = 500;
    std::uint64_t seed = 0;
    FlowSchedule schedule;

    void validate() const;
};

struct FlowEvalRow {
    std::size_t step_count = 0;
    double energy_distance = 0.0;
    double straightness = 0.0;
    double wall_ms = 0.0;
};

template <typename T>
struct Flow2DResult {
    VelocityMLP<T> model;
    /// (step, mean rf_loss since the previous entry).
    std::vector<std::pair<std::size_t, double>> loss_curve;
    std::vector<FlowEvalRow> eval;
    /// Energy distance between two independent data draws of eval_samples.
    double noise_floor = 0.0;
};

template <typename T>
Flow2DResult<T> train_flow_2d(ToyDataset dataset, const VelocityMLPConfig& mlp, const Flow2DTrainConfig& cfg);

/// Header: step_count, energy_distance, straightness, wall_ms.
void write_flow_eval_csv(const std::filesystem::path& path, const std::vector<FlowEvalRow>& rows);

}  // namespace posemoe
