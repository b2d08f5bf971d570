// SPDX-License-Identifier: Apache-2.0

#include "posemoe/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "posemoe/errors.hpp"

namespace posemoe {

void DenseTransformerConfig::validate() const {
    if (!vocab_size || !embed_dim || !n_layers || !n_heads || !ffn_hidden || !max_seq_len) {
        throw ConfigError("transformer: every extent must be positive");
    }
    if (embed_dim % n_heads) {
        throw ConfigError("transformer: embed_dim " + std::to_string(embed_dim) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
}

void LoRAConfig::validate() const {
    if (rank == 0) throw ConfigError("lora: rank must be >= 1");
    if (!(alpha > 0.0)) throw ConfigError("lora: alpha must be positive");
}

std::size_t ffn_param_count(std::size_t dim, std::size_t hidden) { return dim * hidden + hidden + hidden * dim + dim; }

template <typename T>
TransformerLM<T>::TransformerLM(const DenseTransformerConfig& config, Rng& rng) : config_(config) {
    config.validate();
    const std::size_t d = config.embed_dim;
    token_embedding = random_normal<T>({config.vocab_size, d}, rng, 0.1);
    position_embedding = random_normal<T>({config.max_seq_len, d}, rng, 0.1);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        TransformerBlock<T> b;
        b.ln1 = LayerNorm<T>(d);
        b.wq = Linear<T>(d, d, rng);
        b.wk = Linear<T>(d, d, rng);
        b.wv = Linear<T>(d, d, rng);
        b.wo = Linear<T>(d, d, rng);
        b.ln2 = LayerNorm<T>(d);
        b.ffn = FeedForward<T>(d, config.ffn_hidden, rng);
        blocks_.push_back(std::move(b));
    }
    ln_f = LayerNorm<T>(d);
    head = Linear<T>(d, config.vocab_size, rng, false);
}

template <typename T>
LMOutput<T> TransformerLM<T>::forward(std::span<const std::int32_t> ids, std::size_t batch,
                                      std::size_t seq_len) const {
    if (batch == 0 || seq_len == 0 || ids.size() != batch * seq_len) {
        throw ShapeError("transformer: expected " + std::to_string(batch) + "x" + std::to_string(seq_len) +
                         " token ids, got " + std::to_string(ids.size()));
    }
    if (seq_len > config_.max_seq_len) {
        throw ShapeError("transformer: sequence length " + std::to_string(seq_len) + " exceeds max_seq_len " +
                         std::to_string(config_.max_seq_len));
    }
    for (auto id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
            throw Error("transformer: token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(config_.vocab_size));
        }
    }
    const std::size_t n = batch * seq_len, d = config_.embed_dim;
    std::vector<std::int32_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<std::int32_t>(i % seq_len);

    LMOutput<T> out;
    Tensor<T> x = add(embedding(token_embedding, ids), embedding<T>(position_embedding, positions));
    for (const auto& b : blocks_) {
        Tensor<T> h = b.ln1(x);
        Shape bld{batch, seq_len, d};
        Tensor<T> a = attention(reshape(b.wq(h), bld), reshape(b.wk(h), bld), reshape(b.wv(h), bld), config_.n_heads,
                                true);
        x = add(x, b.wo(reshape(a, {n, d})));
        Tensor<T> h2 = b.ln2(x);
        out.ffn_inputs.push_back(h2);
        if (b.moe) {
            auto m = (*b.moe)(h2);
            x = add(x, m.y);
            out.routing.push_back(std::move(m.decision));
        } else {
            x = add(x, b.ffn(h2));
        }
    }
    out.logits = reshape(head(ln_f(x)), {batch, seq_len, config_.vocab_size});
    return out;
}

template <typename T>
ParamList<T> TransformerLM<T>::parameters() const {
    ParamList<T> p;
    p.push_back({"tok_emb", token_embedding});
    p.push_back({"pos_emb", position_embedding});
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        const std::string pre = "block" + std::to_string(l);
        b.ln1.collect(p, pre + ".ln1");
        b.wq.collect(p, pre + ".wq");
        b.wk.collect(p, pre + ".wk");
        b.wv.collect(p, pre + ".wv");
        b.wo.collect(p, pre + ".wo");
        b.ln2.collect(p, pre + ".ln2");
        if (b.moe) {
            b.moe->collect(p, pre + ".moe");
        } else {
            b.ffn.collect(p, pre + ".ffn");
        }
    }
    ln_f.collect(p, "ln_f");
    head.collect(p, "head");
    return p;
}

template <typename T>
TransformerLM<T> TransformerLM<T>::deep_copy() const {
    TransformerLM m;
    m.config_ = config_;
    m.token_embedding = copy_param(token_embedding);
    m.position_embedding = copy_param(position_embedding);
    for (const auto& b : blocks_) {
        TransformerBlock<T> c;
        c.ln1 = b.ln1.deep_copy();
        c.wq = b.wq.deep_copy();
        c.wk = b.wk.deep_copy();
        c.wv = b.wv.deep_copy();
        c.wo = b.wo.deep_copy();
        c.ln2 = b.ln2.deep_copy();
        if (b.moe) {
            c.moe = b.moe->deep_copy();
        } else {
            c.ffn = b.ffn.deep_copy();
        }
        m.blocks_.push_back(std::move(c));
    }
    m.ln_f = ln_f.deep_copy();
    m.head = head.deep_copy();
    return m;
}

template <typename T>
TransformerLM<T> convert_dense_to_moe(const TransformerLM<T>& dense, const MoEConfig& cfg) {
    cfg.validate();
    if (dense.is_moe()) throw ConfigError("convert_dense_to_moe: model is already MoE");
    TransformerLM<T> moe = dense.deep_copy();
    for (auto& b : moe.blocks()) {
        MoELayer<T> layer;
        layer.config = cfg;
        layer.router = Router<T>(dense.config().embed_dim, cfg.num_experts);
        for (std::size_t i = 0; i < cfg.num_experts; ++i) layer.experts.push_back(b.ffn.deep_copy());
        b.moe = std::move(layer);
        b.ffn = FeedForward<T>{};
    }
    return moe;
}

namespace {

template <typename T>
void add_lora(Linear<T>& lin, const LoRAConfig& cfg, Rng& rng) {
    const std::size_t in = lin.in_features(), out = lin.out_features();
    if (cfg.rank > std::min(in, out)) {
        throw ConfigError("lora: rank " + std::to_string(cfg.rank) + " exceeds min(" + std::to_string(out) + ", " +
                          std::to_string(in) + ")");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    lin.lora_a = Tensor<T>({cfg.rank, in}, true);
    rng.fill_uniform<T>(lin.lora_a.mutable_data(), -bound, bound);
    lin.lora_b = Tensor<T>({out, cfg.rank}, true);
    lin.lora_scale = static_cast<T>(cfg.scaling());
}

}  // namespace

template <typename T>
void attach_lora(TransformerLM<T>& model, const LoRAConfig& cfg, Rng& rng) {
    cfg.validate();
    for (auto& b : model.blocks()) {
        if (cfg.attention) {
            for (Linear<T>* lin : {&b.wq, &b.wk, &b.wv, &b.wo}) add_lora(*lin, cfg, rng);
        }
        if (cfg.ffn) {
            if (b.moe) {
                for (auto& ex : b.moe->experts) {
                    add_lora(ex.up, cfg, rng);
                    add_lora(ex.down, cfg, rng);
                }
            } else {
                add_lora(b.ffn.up, cfg, rng);
                add_lora(b.ffn.down, cfg, rng);
            }
        }
    }
    for (auto& p : model.parameters()) {
        const auto& name = p.name;
        const bool adapter = name.ends_with(".lora_a") || name.ends_with(".lora_b");
        const bool router = name.ends_with(".router");
        p.tensor.set_requires_grad(adapter || router);
    }
}

template <typename T>
void unfreeze_all(TransformerLM<T>& model) {
    for (auto& p : model.parameters()) p.tensor.set_requires_grad(true);
}

template <typename T>
LMLoss<T> lm_loss(const TransformerLM<T>& model, std::span<const std::int32_t> windows, std::size_t batch,
                  std::size_t seq_len) {
    const std::size_t w = seq_len + 1;
    if (windows.size() != batch * w) {
        throw ShapeError("lm_loss: expected " + std::to_string(batch) + " windows of " + std::to_string(w) +
                         " tokens, got " + std::to_string(windows.size()) + " tokens");
    }
    std::vector<std::int32_t> inputs, targets;
    inputs.reserve(batch * seq_len);
    targets.reserve(batch * seq_len);
    for (std::size_t b = 0; b < batch; ++b) {
        inputs.insert(inputs.end(), windows.begin() + b * w, windows.begin() + b * w + seq_len);
        targets.insert(targets.end(), windows.begin() + b * w + 1, windows.begin() + (b + 1) * w);
    }
    auto out = model.forward(inputs, batch, seq_len);
    LMLoss<T> loss;
    loss.cross_entropy = cross_entropy(reshape(out.logits, {batch * seq_len, model.config().vocab_size}), targets);
    if (!out.routing.empty()) {
        for (const auto& dec : out.routing) {
            LoadBalanceStats st;
            Tensor<T> l = load_balance_loss(dec, &st);
            loss.balance = loss.balance.defined() ? add(loss.balance, l) : l;
            loss.layer_stats.push_back(std::move(st));
        }
        loss.balance = scale(loss.balance, T(1) / static_cast<T>(out.routing.size()));
    }
    return loss;
}

template <typename T>
double routing_margin(const LMOutput<T>& out) {
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& d : out.routing) {
        const std::size_t e = d.num_experts, k = d.top_k;
        for (std::size_t t = 0; t < d.tokens(); ++t) {
            std::vector<double> row(d.probs.data().begin() + t * e, d.probs.data().begin() + (t + 1) * e);
            std::sort(row.begin(), row.end(), std::greater<>());
            if (e > 1) margin = std::min(margin, row[0] - row[1]);
            if (k < e) margin = std::min(margin, row[k - 1] - row[k]);
        }
    }
    return margin;
}

#define POSEMOE_INSTANTIATE(T)                                                                                \
    template class TransformerLM<T>;                                                                          \
    template TransformerLM<T> convert_dense_to_moe(const TransformerLM<T>&, const MoEConfig&);                \
    template void attach_lora(TransformerLM<T>&, const LoRAConfig&, Rng&);                                    \
    template void unfreeze_all(TransformerLM<T>&);                                                            \
    template LMLoss<T> lm_loss(const TransformerLM<T>&, std::span<const std::int32_t>, std::size_t, std::size_t); \
    template double routing_margin(const LMOutput<T>&);

POSEMOE_INSTANTIATE(float)
POSEMOE_INSTANTIATE(double)
#undef POSEMOE_INSTANTIATE

}  // namespace posemoe
