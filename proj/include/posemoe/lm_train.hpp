// SPDX-License-Identifier: Apache-2.0
// Training loop shared by dense pre-training, dense LoRA fine-tuning and MoE fine-tuning.
#pragma once

#include <filesystem>
#include <vector>

#include "posemoe/corpus.hpp"
#include "posemoe/transformer.hpp"

namespace posemoe {

struct LMTrainConfig {
    std::size_t epochs = 3;
    std::size_t steps_per_epoch = 100;
    std::size_t batch_size = 16;
    std::size_t seq_len = 32;
    double lr = 2e-5;
    std::size_t warmup_steps = 0;
    double weight_decay = 0.01;
    /// 0 disables clipping.
    double grad_clip = 1.0;
    /// Used only when the model is MoE.
    double balance_coefficient = 0.01;
    std::size_t val_windows = 64;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LMEpochRow {
    std::size_t epoch = 0;
    double train_ce = 0.0;
    double val_ce = 0.0;
    double balance_loss = 0.0;
    /// Argmax fractions over the epoch's training tokens, averaged over layers.
    std::vector<double> F;
};

struct LMTrainResult {
    std::vector<LMEpochRow> rows;
    double final_val_ppl = 0.0;
    /// Argmax fractions on the validation windows after training, per layer.
    std::vector<std::vector<double>> final_val_F;
};

struct LMEvalResult {
    double ce = 0.0;
    std::vector<std::vector<double>> F;
};

template <typename T>
LMEvalResult evaluate_lm(const TransformerLM<T>& model, const std::vector<std::int32_t>& windows,
                         std::size_t seq_len, std::size_t batch_size);

/// AdamW on every trainable parameter of `model`; the loss is next-token
/// cross-entropy plus balance_coefficient·L_balance for MoE models.
template <typename T>
LMTrainResult train_lm(TransformerLM<T>& model, const TokenCorpus& corpus, const LMTrainConfig& cfg);

/// Header: epoch, train_ce, val_ce, balance_loss, F_0..F_{E−1}.
void write_lm_csv(const std::filesystem::path& path, const std::vector<LMEpochRow>& rows, std::size_t num_experts);

}  // namespace posemoe
