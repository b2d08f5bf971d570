// SPDX-License-Identifier: Apache-2.0
// Parameter containers shared by the models.
#pragma once

#include <string>
#include <vector>

#include "posemoe/ops.hpp"
#include "posemoe/rng.hpp"
#include "posemoe/tensor.hpp"

namespace posemoe {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
std::vector<Tensor<T>> trainable(const ParamList<T>& params) {
    std::vector<Tensor<T>> out;
    for (const auto& p : params)
        if (p.tensor.requires_grad()) out.push_back(p.tensor);
    return out;
}

template <typename T>
std::size_t count_elements(const ParamList<T>& params, bool trainable_only = false) {
    std::size_t n = 0;
    for (const auto& p : params)
        if (!trainable_only || p.tensor.requires_grad()) n += p.tensor.numel();
    return n;
}

/// Deep copy of values; the copy's tensors are fresh leaves.
template <typename T>
Tensor<T> copy_param(const Tensor<T>& t) {
    return t.defined() ? t.clone(t.requires_grad()) : Tensor<T>{};
}

/// Fully connected layer, weight [out, in], with an optional low-rank adapter
/// y = x·Wᵀ + b + scale·(x·Aᵀ)·Bᵀ, A [r, in], B [out, r].
template <typename T>
struct Linear {
    Tensor<T> weight;
    Tensor<T> bias;
    Tensor<T> lora_a;
    Tensor<T> lora_b;
    T lora_scale = T(0);

    Linear() = default;
    /// Uniform(±1/√in) init for weight and bias.
    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
    static Linear zeros(std::size_t in, std::size_t out, bool with_bias = true);

    std::size_t in_features() const { return weight.dim(1); }
    std::size_t out_features() const { return weight.dim(0); }
    bool has_lora() const { return lora_a.defined(); }

    Tensor<T> operator()(const Tensor<T>& x) const;
    /// W + scale·B·A (no graph).
    Tensor<T> effective_weight() const;
    void collect(ParamList<T>& out, const std::string& prefix) const;
    Linear deep_copy() const;
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim);
    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
    void collect(ParamList<T>& out, const std::string& prefix) const;
    LayerNorm deep_copy() const { return {copy_param(gamma), copy_param(beta)}; }

private:
    LayerNorm(Tensor<T> g, Tensor<T> b) : gamma(std::move(g)), beta(std::move(b)) {}
};

/// Two-layer SiLU feed-forward network.
template <typename T>
struct FeedForward {
    Linear<T> up;
    Linear<T> down;

    FeedForward() = default;
    FeedForward(std::size_t dim, std::size_t hidden, Rng& rng) : up(dim, hidden, rng), down(hidden, dim, rng) {}
    Tensor<T> operator()(const Tensor<T>& x) const { return down(silu(up(x))); }
    void collect(ParamList<T>& out, const std::string& prefix) const {
        up.collect(out, prefix + ".up");
        down.collect(out, prefix + ".down");
    }
    FeedForward deep_copy() const {
        FeedForward f;
        f.up = up.deep_copy();
        f.down = down.deep_copy();
        return f;
    }
};

template <typename T>
Tensor<T> random_normal(Shape shape, Rng& rng, double stddev, bool requires_grad = true);

}  // namespace posemoe
