// SPDX-License-Identifier: Apache-2.0

#include "posemoe/model_gradcheck.hpp"
#include "posemoe/posedit.hpp"

namespace posemoe {

GradSuiteResult run_posedit_grad_check(std::uint64_t seed, const GradCheckOptions& options) {
    PoseDiTConfig cfg;
    cfg.n_blocks = 2;
    cfg.hidden = 8;
    cfg.n_heads = 2;
    cfg.ffn_mult = 2;
    cfg.horizon = 2;
    cfg.n_templates = 3;
    cfg.template_dim = 3;
    cfg.scene_features = 4;

    Rng rng(Rng::derive(seed, 0));
    PoseDiT<double> model(cfg, rng);
    // Zero-initialised modulation and head would leave most of the graph unexercised.
    for (auto& p : model.parameters()) {
        if (p.name.find(".ada.") != std::string::npos || p.name.starts_with("head.")) {
            rng.fill_normal<double>(p.tensor.mutable_data(), 0.3);
        }
    }
    std::vector<PoseDemo> demos(2);
    for (std::size_t i = 0; i < demos.size(); ++i) {
        auto& d = demos[i];
        d.cond.template_id = i;
        d.cond.features.resize(cfg.scene_features);
        rng.fill_uniform<double>(d.cond.features, -1.0, 1.0);
        d.target.resize(cfg.flat_dim());
        rng.fill_uniform<double>(d.target, -1.0, 1.0);
        d.valid.assign(cfg.horizon, 1);
    }
    demos[1].valid[1] = 0;
    const std::uint64_t noise_seed = Rng::derive(seed, 1), t_seed = Rng::derive(seed, 2);
    auto f = [model, demos, noise_seed, t_seed] {
        Rng noise(noise_seed), t(t_seed);
        return posedit_loss(model, {&demos[0], &demos[1]}, noise, t);
    };
    return {"posedit", grad_check(f, model.parameters(), options)};
}

}  // namespace posemoe
