// SPDX-License-Identifier: Apache-2.0
// Decoder-only causal language model whose FFN can be dense or mixture-of-experts.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "posemoe/moe.hpp"
#include "posemoe/nn.hpp"

namespace posemoe {

struct DenseTransformerConfig {
    std::size_t vocab_size = 32;
    std::size_t embed_dim = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t ffn_hidden = 256;
    std::size_t max_seq_len = 64;

    void validate() const;
};

struct LoRAConfig {
    std::size_t rank = 4;
    double alpha = 8.0;
    bool attention = true;
    /// Expert FFNs in an MoE model, the FFN in a dense one.
    bool ffn = true;

    double scaling() const { return alpha / static_cast<double>(rank); }
    void validate() const;
};

template <typename T>
struct TransformerBlock {
    LayerNorm<T> ln1;
    Linear<T> wq, wk, wv, wo;
    LayerNorm<T> ln2;
    FeedForward<T> ffn;
    std::optional<MoELayer<T>> moe;

    bool is_moe() const { return moe.has_value(); }
};

template <typename T>
struct LMOutput {
    /// [B, L, vocab]
    Tensor<T> logits;
    /// One per block when the model is MoE.
    std::vector<RoutingDecision<T>> routing;
    /// Input to each block's FFN or MoE layer, [B·L, D].
    std::vector<Tensor<T>> ffn_inputs;
};

template <typename T>
class TransformerLM {
public:
    TransformerLM() = default;
    TransformerLM(const DenseTransformerConfig& config, Rng& rng);

    const DenseTransformerConfig& config() const { return config_; }
    bool is_moe() const { return !blocks_.empty() && blocks_.front().is_moe(); }
    std::vector<TransformerBlock<T>>& blocks() { return blocks_; }
    const std::vector<TransformerBlock<T>>& blocks() const { return blocks_; }

    /// ids holds batch·seq_len tokens, row-major.
    LMOutput<T> forward(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq_len) const;

    ParamList<T> parameters() const;
    TransformerLM deep_copy() const;

    Tensor<T> token_embedding;
    Tensor<T> position_embedding;
    LayerNorm<T> ln_f;
    Linear<T> head;

private:
    DenseTransformerConfig config_;
    std::vector<TransformerBlock<T>> blocks_;
};

/// Every FFN becomes E bitwise copies behind a zero router; everything else is copied.
template <typename T>
TransformerLM<T> convert_dense_to_moe(const TransformerLM<T>& dense, const MoEConfig& cfg);

/// Adds ΔW = (α/r)·B·A to the targets (A uniform ±1/√in, B zero) and freezes
/// every base weight. Routers stay trainable.
template <typename T>
void attach_lora(TransformerLM<T>& model, const LoRAConfig& cfg, Rng& rng);

/// Makes every parameter, base and adapter, trainable.
template <typename T>
void unfreeze_all(TransformerLM<T>& model);

std::size_t ffn_param_count(std::size_t dim, std::size_t hidden);

/// Next-token cross-entropy over windows of seq_len + 1 tokens.
template <typename T>
struct LMLoss {
    Tensor<T> cross_entropy;
    /// Per-layer balance losses averaged; undefined for dense models.
    Tensor<T> balance;
    std::vector<LoadBalanceStats> layer_stats;
};

template <typename T>
LMLoss<T> lm_loss(const TransformerLM<T>& model, std::span<const std::int32_t> windows, std::size_t batch,
                  std::size_t seq_len);

/// Smallest probability gap at a top-k or argmax boundary over every layer
/// and token; finite differences are only valid when this stays clear of h.
template <typename T>
double routing_margin(const LMOutput<T>& out);

}  // namespace posemoe
