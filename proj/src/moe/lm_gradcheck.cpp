// SPDX-License-Identifier: Apache-2.0

#include "posemoe/errors.hpp"
#include "posemoe/model_gradcheck.hpp"
#include "posemoe/transformer.hpp"

namespace posemoe {

GradSuiteResult run_moe_lm_grad_check(std::uint64_t seed, const GradCheckOptions& options, double min_margin) {
    DenseTransformerConfig mc;
    mc.vocab_size = 11;
    mc.embed_dim = 8;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.ffn_hidden = 12;
    mc.max_seq_len = 6;
    const std::size_t batch = 2, seq_len = 5;

    for (std::uint64_t attempt = 0; attempt < 200; ++attempt) {
        Rng rng(Rng::derive(seed, attempt));
        TransformerLM<double> dense(mc, rng);
        auto model = convert_dense_to_moe(dense, MoEConfig::e4_top2());
        attach_lora(model, LoRAConfig{.rank = 2, .alpha = 4.0}, rng);
        unfreeze_all(model);
        for (auto& p : model.parameters()) {
            const bool router = p.name.ends_with(".router");
            const bool adapter_b = p.name.ends_with(".lora_b");
            if (router || adapter_b) rng.fill_normal<double>(p.tensor.mutable_data(), router ? 2.0 : 0.3);
        }
        std::vector<std::int32_t> windows(batch * (seq_len + 1));
        for (auto& t : windows) t = static_cast<std::int32_t>(rng.below(mc.vocab_size));

        std::vector<std::int32_t> inputs;
        for (std::size_t b = 0; b < batch; ++b)
            inputs.insert(inputs.end(), windows.begin() + b * (seq_len + 1), windows.begin() + b * (seq_len + 1) + seq_len);
        double margin;
        {
            NoGradGuard no_grad;
            margin = routing_margin(model.forward(inputs, batch, seq_len));
        }
        if (margin < min_margin) continue;

        auto f = [model, windows] {
            auto loss = lm_loss(model, windows, batch, seq_len);
            return add(loss.cross_entropy, scale(loss.balance, 0.5));
        };
        return {"moe_lm", grad_check(f, model.parameters(), options)};
    }
    throw Error("moe_lm gradcheck: no draw cleared the routing margin");
}

}  // namespace posemoe
