// SPDX-License-Identifier: Apache-2.0

#include "posemoe/optim.hpp"

#include <cmath>
#include <numbers>

#include "posemoe/errors.hpp"

namespace posemoe {

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
        if (!p.defined() || !p.requires_grad()) throw Error("AdamW: registered parameter does not require grad");
        m_.emplace_back(p.numel(), T(0));
        v_.emplace_back(p.numel(), T(0));
    }
}

template <typename T>
void AdamW<T>::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) {
            throw Error("AdamW: parameter " + std::to_string(i) + " " + shape_str(params_[i].shape()) +
                        " has no gradient");
        }
        if (m_[i].size() != params_[i].numel()) throw Error("AdamW: moment/parameter size mismatch");
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const T lr = static_cast<T>(config_.lr);
    const T decay = static_cast<T>(config_.lr * config_.weight_decay);
    const T eps = static_cast<T>(config_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto theta = params_[i].mutable_data();
        auto g = params_[i].grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = static_cast<T>(b1) * m[j] + static_cast<T>(1.0 - b1) * g[j];
            v[j] = static_cast<T>(b2) * v[j] + static_cast<T>(1.0 - b2) * g[j] * g[j];
            const T mhat = m[j] / static_cast<T>(c1);
            const T vhat = v[j] / static_cast<T>(c2);
            theta[j] -= decay * theta[j];
            theta[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <typename T>
void AdamW<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

double warmup_cosine_lr(double peak, std::size_t step, std::size_t total, std::size_t warmup, double floor) {
    if (warmup > 0 && step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (total <= warmup) return peak;
    const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(total - warmup));
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return peak * (floor + (1.0 - floor) * cosine);
}

template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const T factor = static_cast<T>(max_norm / norm);
        for (auto p : params)
            for (T& g : p.mutable_grad()) g *= factor;
    }
    return norm;
}

template double clip_grad_norm(const std::vector<Tensor<float>>&, double);
template double clip_grad_norm(const std::vector<Tensor<double>>&, double);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace posemoe
