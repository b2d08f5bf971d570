// SPDX-License-Identifier: Apache-2.0
// Top-k softmax routing, the auxiliary load-balancing loss and the MoE FFN layer.
#pragma once

#include <cstddef>
#include <vector>

#include "posemoe/nn.hpp"

namespace posemoe {

struct MoEConfig {
    std::size_t num_experts = 4;
    std::size_t top_k = 2;
    double balance_coefficient = 0.01;
    bool renormalize_topk = true;

    void validate() const;
    static MoEConfig e4_top2() { return {4, 2}; }
    static MoEConfig e2_top2() { return {2, 2}; }
};

/// Routing logits are W·x with W stored [E, D].
template <typename T>
struct Router {
    Tensor<T> weight;

    Router() = default;
    Router(std::size_t dim, std::size_t num_experts) : weight(Shape{num_experts, dim}, true) {}
    std::size_t num_experts() const { return weight.dim(0); }
    std::size_t dim() const { return weight.dim(1); }
};

template <typename T>
struct RoutingDecision {
    std::size_t num_experts = 0;
    std::size_t top_k = 0;
    /// Softmax over expert logits, [tokens, E].
    Tensor<T> probs;
    /// [tokens·top_k], best first; equal probabilities go to the lower index.
    std::vector<std::size_t> selected;
    /// [tokens, top_k], aligned with `selected`.
    Tensor<T> gate_weights;

    std::size_t tokens() const { return probs.dim(0); }
    /// Argmax of the full softmax for token t.
    std::size_t argmax(std::size_t t) const { return selected[t * top_k]; }
};

/// Top-k selection and gates for given routing probabilities [tokens, E].
template <typename T>
RoutingDecision<T> decide(const Tensor<T>& probs, const MoEConfig& cfg);

template <typename T>
RoutingDecision<T> route(const Router<T>& router, const Tensor<T>& x, const MoEConfig& cfg);

/// Indices of the k largest values, descending, ties to the lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k);

struct LoadBalanceStats {
    std::vector<double> F;
    std::vector<double> G;
    double loss = 0.0;
};

/// loss = E·Σ F_i·G_i. F_i counts argmax assignments and is a constant; the
/// gradient reaches the router through G_i = mean_t P(x_t)_i.
template <typename T>
Tensor<T> load_balance_loss(const RoutingDecision<T>& decision, LoadBalanceStats* stats = nullptr);

template <typename T>
struct MoELayer {
    Router<T> router;
    std::vector<FeedForward<T>> experts;
    MoEConfig config;

    struct Output {
        Tensor<T> y;
        RoutingDecision<T> decision;
    };

    /// y_t = Σ_{i ∈ selected(t)} gate_ti · FFN_i(x_t).
    Output operator()(const Tensor<T>& x) const;
    void collect(ParamList<T>& out, const std::string& prefix) const;
    MoELayer deep_copy() const;
};

}  // namespace posemoe
