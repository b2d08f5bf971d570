// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "posemoe/tensor.hpp"

namespace posemoe {

/// Defaults: lr from the fine-tuning recipe; betas, eps and weight decay are
/// this project's choices.
struct AdamWConfig {
    double lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay and bias correction:
///   θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + eps).
/// Parameters are registered once; every step() needs a populated gradient
/// on each of them. Gradients are not cleared by step(); call zero_grad().
template <typename T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>> params, AdamWConfig config);

    void step();
    void zero_grad();
    void set_lr(double lr) { config_.lr = lr; }
    const AdamWConfig& config() const { return config_; }
    std::size_t step_count() const { return step_; }
    const std::vector<Tensor<T>>& params() const { return params_; }
    std::span<const T> first_moment(std::size_t i) const { return m_.at(i); }
    std::span<const T> second_moment(std::size_t i) const { return v_.at(i); }

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    AdamWConfig config_;
    std::size_t step_ = 0;
};

/// Rescales gradients so their global L2 norm is at most max_norm; returns
/// the norm before clipping. max_norm ≤ 0 only measures.
template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm);

/// Linear warm-up followed by cosine decay to `floor`·peak.
double warmup_cosine_lr(double peak, std::size_t step, std::size_t total, std::size_t warmup, double floor = 0.0);

}  // namespace posemoe
