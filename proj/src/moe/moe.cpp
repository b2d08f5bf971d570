// SPDX-License-Identifier: Apache-2.0

#include "posemoe/moe.hpp"

#include <algorithm>
#include <numeric>

#include "posemoe/errors.hpp"

namespace posemoe {

void MoEConfig::validate() const {
    if (num_experts == 0) throw ConfigError("moe: num_experts must be positive");
    if (top_k == 0 || top_k > num_experts) {
        throw ConfigError("moe: top_k must lie in [1, num_experts], got " + std::to_string(top_k));
    }
    if (!(balance_coefficient >= 0.0)) throw ConfigError("moe: balance_coefficient must be >= 0");
}

std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    idx.resize(k);
    return idx;
}

template <typename T>
RoutingDecision<T> decide(const Tensor<T>& probs, const MoEConfig& cfg) {
    cfg.validate();
    if (probs.rank() != 2 || probs.dim(1) != cfg.num_experts) {
        detail::throw_shape("route", probs.shape(), "expected [tokens, " + std::to_string(cfg.num_experts) + "]");
    }
    const std::size_t n = probs.dim(0), e = cfg.num_experts, k = cfg.top_k;
    RoutingDecision<T> d;
    d.num_experts = e;
    d.top_k = k;
    d.probs = probs;
    d.selected.reserve(n * k);
    std::vector<std::size_t> flat;
    flat.reserve(n * k);
    std::vector<double> row(e);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t i = 0; i < e; ++i) row[i] = static_cast<double>(probs.data()[t * e + i]);
        for (std::size_t i : top_k_indices(row, k)) {
            d.selected.push_back(i);
            flat.push_back(t * e + i);
        }
    }
    Tensor<T> gates = reshape(take<T>(probs, flat), {n, k});
    d.gate_weights = cfg.renormalize_topk ? normalize_rows(gates) : gates;
    return d;
}

template <typename T>
RoutingDecision<T> route(const Router<T>& router, const Tensor<T>& x, const MoEConfig& cfg) {
    if (router.num_experts() != cfg.num_experts) {
        throw ConfigError("route: router has " + std::to_string(router.num_experts()) + " experts, config " +
                          std::to_string(cfg.num_experts));
    }
    return decide(softmax(linear(x, router.weight)), cfg);
}

template <typename T>
Tensor<T> load_balance_loss(const RoutingDecision<T>& decision, LoadBalanceStats* stats) {
    if (!decision.probs.defined() || decision.tokens() == 0) throw Error("load_balance_loss: no tokens");
    const std::size_t n = decision.tokens(), e = decision.num_experts;
    std::vector<T> f(e, T(0));
    for (std::size_t t = 0; t < n; ++t) f[decision.argmax(t)] += T(1);
    for (auto& v : f) v /= static_cast<T>(n);
    Tensor<T> g = mean_rows(decision.probs);
    Tensor<T> loss = scale(sum(mul(g, Tensor<T>({e}, f))), static_cast<T>(e));
    if (stats) {
        stats->F.assign(f.begin(), f.end());
        stats->G.assign(g.data().begin(), g.data().end());
        stats->loss = static_cast<double>(loss.item());
    }
    return loss;
}

template <typename T>
typename MoELayer<T>::Output MoELayer<T>::operator()(const Tensor<T>& x) const {
    if (experts.size() != config.num_experts) {
        throw ConfigError("moe: layer holds " + std::to_string(experts.size()) + " experts, config " +
                          std::to_string(config.num_experts));
    }
    for (const auto& ex : experts) {
        if (ex.up.weight.shape() != experts[0].up.weight.shape() ||
            ex.down.weight.shape() != experts[0].down.weight.shape()) {
            detail::throw_shape("moe", ex.up.weight.shape(), experts[0].up.weight.shape(), "expert shapes differ");
        }
    }
    Output out{Tensor<T>{}, route(router, x, config)};
    const auto& d = out.decision;
    const std::size_t n = x.dim(0), k = config.top_k;
    for (std::size_t i = 0; i < experts.size(); ++i) {
        std::vector<std::size_t> rows, slots;
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t s = 0; s < k; ++s) {
                if (d.selected[t * k + s] == i) {
                    rows.push_back(t);
                    slots.push_back(t * k + s);
                }
            }
        }
        if (rows.empty()) continue;
        Tensor<T> yi = row_scale(experts[i](gather_rows<T>(x, rows)), take<T>(d.gate_weights, slots));
        Tensor<T> contrib = scatter_add_rows<T>(yi, rows, n);
        out.y = out.y.defined() ? add(out.y, contrib) : contrib;
    }
    return out;
}

template <typename T>
void MoELayer<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".router", router.weight});
    for (std::size_t i = 0; i < experts.size(); ++i) experts[i].collect(out, prefix + ".expert" + std::to_string(i));
}

template <typename T>
MoELayer<T> MoELayer<T>::deep_copy() const {
    MoELayer m;
    m.router.weight = copy_param(router.weight);
    for (const auto& ex : experts) m.experts.push_back(ex.deep_copy());
    m.config = config;
    return m;
}

#define POSEMOE_INSTANTIATE(T)                                                                  \
    template RoutingDecision<T> decide(const Tensor<T>&, const MoEConfig&);                     \
    template RoutingDecision<T> route(const Router<T>&, const Tensor<T>&, const MoEConfig&);    \
    template Tensor<T> load_balance_loss(const RoutingDecision<T>&, LoadBalanceStats*);         \
    template struct MoELayer<T>;

POSEMOE_INSTANTIATE(float)
POSEMOE_INSTANTIATE(double)
#undef POSEMOE_INSTANTIATE

}  // namespace posemoe
