// SPDX-License-Identifier: Apache-2.0

#include "posemoe/lm_train.hpp"

#include <cmath>
#include <fstream>

#include "posemoe/errors.hpp"
#include "posemoe/optim.hpp"
#include "posemoe/report.hpp"

namespace posemoe {

void LMTrainConfig::validate() const {
    if (!epochs || !steps_per_epoch || !batch_size || !seq_len || !val_windows) {
        throw ConfigError("train: epochs, steps_per_epoch, batch_size, seq_len and val_windows must be positive");
    }
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (!(weight_decay >= 0.0) || !(balance_coefficient >= 0.0) || !(grad_clip >= 0.0)) {
        throw ConfigError("train: weight_decay, balance_coefficient and grad_clip must be >= 0");
    }
}

template <typename T>
LMEvalResult evaluate_lm(const TransformerLM<T>& model, const std::vector<std::int32_t>& windows,
                         std::size_t seq_len, std::size_t batch_size) {
    NoGradGuard no_grad;
    const std::size_t w = seq_len + 1, n = windows.size() / w;
    LMEvalResult r;
    double ce_sum = 0.0;
    std::size_t tokens = 0;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t b = std::min(batch_size, n - start);
        std::span<const std::int32_t> chunk(windows.data() + start * w, b * w);
        auto loss = lm_loss(model, chunk, b, seq_len);
        ce_sum += static_cast<double>(loss.cross_entropy.item()) * static_cast<double>(b * seq_len);
        if (r.F.empty()) r.F.assign(loss.layer_stats.size(), {});
        for (std::size_t l = 0; l < loss.layer_stats.size(); ++l) {
            const auto& f = loss.layer_stats[l].F;
            r.F[l].resize(f.size(), 0.0);
            for (std::size_t i = 0; i < f.size(); ++i) r.F[l][i] += f[i] * static_cast<double>(b * seq_len);
        }
        tokens += b * seq_len;
    }
    r.ce = ce_sum / static_cast<double>(tokens);
    for (auto& layer : r.F)
        for (auto& v : layer) v /= static_cast<double>(tokens);
    return r;
}

template <typename T>
LMTrainResult train_lm(TransformerLM<T>& model, const TokenCorpus& corpus, const LMTrainConfig& cfg) {
    cfg.validate();
    const auto params = trainable(model.parameters());
    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW<T> opt(params, opt_cfg);
    Rng rng(Rng::derive(cfg.seed, 101));
    const auto val = fixed_windows(corpus.val, cfg.seq_len, cfg.val_windows);
    const std::size_t total = cfg.epochs * cfg.steps_per_epoch;
    const std::size_t experts = model.is_moe() ? model.blocks().front().moe->config.num_experts : 0;

    LMTrainResult result;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        LMEpochRow row;
        row.epoch = epoch;
        row.F.assign(experts, 0.0);
        for (std::size_t s = 0; s < cfg.steps_per_epoch; ++s, ++step) {
            const auto batch = sample_windows(corpus.train, cfg.batch_size, cfg.seq_len, rng);
            opt.set_lr(warmup_cosine_lr(cfg.lr, step, total, cfg.warmup_steps));
            opt.zero_grad();
            try {
                auto loss = lm_loss(model, batch, cfg.batch_size, cfg.seq_len);
                Tensor<T> objective = loss.cross_entropy;
                if (loss.balance.defined()) {
                    objective = add(objective, scale(loss.balance, static_cast<T>(cfg.balance_coefficient)));
                    row.balance_loss += static_cast<double>(loss.balance.item());
                    for (const auto& st : loss.layer_stats)
                        for (std::size_t i = 0; i < experts; ++i)
                            row.F[i] += st.F[i] / static_cast<double>(loss.layer_stats.size());
                }
                row.train_ce += static_cast<double>(loss.cross_entropy.item());
                backward(objective);
                clip_grad_norm(params, cfg.grad_clip);
                opt.step();
            } catch (const NonFiniteError& e) {
                throw DivergenceError("train: non-finite value at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step) + ": " + e.what());
            }
        }
        const double steps = static_cast<double>(cfg.steps_per_epoch);
        row.train_ce /= steps;
        row.balance_loss /= steps;
        for (auto& f : row.F) f /= steps;
        auto ev = evaluate_lm(model, val, cfg.seq_len, cfg.batch_size);
        row.val_ce = ev.ce;
        if (!std::isfinite(row.train_ce) || !std::isfinite(row.val_ce)) {
            throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch));
        }
        result.final_val_F = std::move(ev.F);
        result.rows.push_back(std::move(row));
    }
    result.final_val_ppl = std::exp(result.rows.back().val_ce);
    return result;
}

void write_lm_csv(const std::filesystem::path& path, const std::vector<LMEpochRow>& rows, std::size_t num_experts) {
    CsvWriter csv(path);
    std::vector<std::string> header{"epoch", "train_ce", "val_ce", "balance_loss"};
    for (std::size_t i = 0; i < num_experts; ++i) header.push_back("F_" + std::to_string(i));
    csv.header(header);
    for (const auto& r : rows) {
        std::vector<std::string> cells{std::to_string(r.epoch), format_real(r.train_ce), format_real(r.val_ce),
                                       format_real(r.balance_loss)};
        for (std::size_t i = 0; i < num_experts; ++i) cells.push_back(format_real(i < r.F.size() ? r.F[i] : 0.0));
        csv.row(cells);
    }
}

template LMEvalResult evaluate_lm(const TransformerLM<float>&, const std::vector<std::int32_t>&, std::size_t,
                                  std::size_t);
template LMEvalResult evaluate_lm(const TransformerLM<double>&, const std::vector<std::int32_t>&, std::size_t,
                                  std::size_t);
template LMTrainResult train_lm(TransformerLM<float>&, const TokenCorpus&, const LMTrainConfig&);
template LMTrainResult train_lm(TransformerLM<double>&, const TokenCorpus&, const LMTrainConfig&);

}  // namespace posemoe
