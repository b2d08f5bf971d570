// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "posemoe/errors.hpp"
#include "posemoe/lm_train.hpp"
#include "posemoe/model_gradcheck.hpp"

namespace {

using namespace posemoe;
using Td = Tensor<double>;

DenseTransformerConfig toy_config() {
    DenseTransformerConfig c;
    c.vocab_size = 13;
    c.embed_dim = 16;
    c.n_layers = 2;
    c.n_heads = 4;
    c.ffn_hidden = 24;
    c.max_seq_len = 8;
    return c;
}

std::vector<std::int32_t> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
    std::vector<std::int32_t> ids(n);
    for (auto& t : ids) t = static_cast<std::int32_t>(rng.below(vocab));
    return ids;
}

TEST(DenseLM, LogitShapeAndCausality) {
    Rng rng(1);
    TransformerLM<double> lm(toy_config(), rng);
    auto ids = random_ids(rng, 2 * 6, 13);
    auto base = lm.forward(ids, 2, 6).logits;
    EXPECT_EQ(base.shape(), (Shape{2, 6, 13}));
    for (std::size_t j = 0; j < 6; ++j) {
        auto perturbed = ids;
        perturbed[j] = (perturbed[j] + 1) % 13;
        auto y = lm.forward(perturbed, 2, 6).logits;
        for (std::size_t p = 0; p < j; ++p)
            for (std::size_t v = 0; v < 13; ++v) ASSERT_EQ(y.data()[p * 13 + v], base.data()[p * 13 + v]);
    }
}

TEST(DenseLM, InitialCrossEntropyNearUniform) {
    Rng rng(2);
    auto cfg = toy_config();
    cfg.vocab_size = 28;
    cfg.max_seq_len = 32;
    TransformerLM<float> lm(cfg, rng);
    auto windows = random_ids(rng, 16 * 33, 28);
    const double ce = lm_loss(lm, windows, 16, 32).cross_entropy.item();
    EXPECT_NEAR(ce, std::log(28.0), 0.05 * std::log(28.0));
}

TEST(DenseLM, RejectsOutOfRangeTokens) {
    Rng rng(3);
    TransformerLM<double> lm(toy_config(), rng);
    std::vector<std::int32_t> ids{0, 1, 13};
    EXPECT_THROW(lm.forward(ids, 1, 3), Error);
    std::vector<std::int32_t> neg{0, -1, 2};
    EXPECT_THROW(lm.forward(neg, 1, 3), Error);
}

TEST(Route, ZeroRouterIsUniformAndPicksLowestIndices) {
    for (std::size_t e : {2u, 3u, 4u, 8u}) {
        for (std::size_t k = 1; k <= e; ++k) {
            Router<double> r(5, e);
            Td x({3, 5});
            Rng(e).fill_normal<double>(x.mutable_data());
            auto d = route(r, x, MoEConfig{e, k});
            for (double p : d.probs.data()) EXPECT_NEAR(p, 1.0 / e, 1e-15);
            for (std::size_t t = 0; t < 3; ++t)
                for (std::size_t s = 0; s < k; ++s) EXPECT_EQ(d.selected[t * k + s], s);
        }
    }
}

TEST(Route, LogThreeVersusZeroTopOne) {
    // Row 0 of W reads x_0, so the logits are (ln 3, 0).
    Router<double> r(2, 2);
    r.weight.mutable_data()[0] = std::log(3.0);
    Td x({1, 2}, {1.0, 0.0});
    auto d = route(r, x, MoEConfig{2, 1});
    EXPECT_NEAR(d.probs.data()[0], 0.75, 1e-15);
    EXPECT_NEAR(d.probs.data()[1], 0.25, 1e-15);
    EXPECT_EQ(d.selected[0], 0u);
    EXPECT_DOUBLE_EQ(d.gate_weights.data()[0], 1.0);
}

TEST(Route, RenormalisedTopTwoGates) {
    Td probs({1, 4}, {0.4, 0.3, 0.2, 0.1});
    auto d = decide(probs, MoEConfig{4, 2});
    EXPECT_EQ(d.selected, (std::vector<std::size_t>{0, 1}));
    EXPECT_NEAR(d.gate_weights.data()[0], 4.0 / 7.0, 1e-15);
    EXPECT_NEAR(d.gate_weights.data()[1], 3.0 / 7.0, 1e-15);
    MoEConfig raw{4, 2};
    raw.renormalize_topk = false;
    auto r = decide(probs, raw);
    EXPECT_DOUBLE_EQ(r.gate_weights.data()[0], 0.4);
}

TEST(Route, SimplexAndDistinctSelections) {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        Router<double> r(6, 5);
        rng.fill_normal<double>(r.weight.mutable_data(), 3.0);
        Td x({7, 6});
        rng.fill_normal<double>(x.mutable_data());
        auto d = route(r, x, MoEConfig{5, 3});
        for (std::size_t t = 0; t < 7; ++t) {
            double s = 0, g = 0;
            for (std::size_t i = 0; i < 5; ++i) s += d.probs.data()[t * 5 + i];
            for (std::size_t j = 0; j < 3; ++j) g += d.gate_weights.data()[t * 3 + j];
            EXPECT_NEAR(s, 1.0, 1e-12);
            EXPECT_NEAR(g, 1.0, 1e-12);
            std::set<std::size_t> uniq(d.selected.begin() + t * 3, d.selected.begin() + t * 3 + 3);
            EXPECT_EQ(uniq.size(), 3u);
        }
    }
}

TEST(Route, ConfigValidation) {
    EXPECT_THROW(MoEConfig({2, 3}).validate(), ConfigError);
    EXPECT_THROW(MoEConfig({2, 0}).validate(), ConfigError);
}

MoELayer<double> layer_with(std::vector<FeedForward<double>> experts, std::size_t k) {
    MoELayer<double> m;
    m.config = MoEConfig{experts.size(), k};
    m.router = Router<double>(experts[0].up.in_features(), experts.size());
    m.experts = std::move(experts);
    return m;
}

TEST(MoELayer, IdenticalExpertsMatchSingleFFN) {
    Rng rng(6);
    FeedForward<double> ffn(6, 10, rng);
    auto layer = layer_with({ffn.deep_copy(), ffn.deep_copy(), ffn.deep_copy(), ffn.deep_copy()}, 2);
    rng.fill_normal<double>(layer.router.weight.mutable_data(), 2.0);
    Td x({9, 6});
    rng.fill_normal<double>(x.mutable_data());
    auto y = layer(x).y, ref = ffn(x);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-12);
}

TEST(MoELayer, AllExpertsUniformGatesGiveMean) {
    Rng rng(7);
    std::vector<FeedForward<double>> ex;
    for (int i = 0; i < 3; ++i) ex.emplace_back(4, 5, rng);
    auto layer = layer_with(ex, 3);
    Td x({5, 4});
    rng.fill_normal<double>(x.mutable_data());
    auto y = layer(x).y;
    auto a = ex[0](x), b = ex[1](x), c = ex[2](x);
    for (std::size_t i = 0; i < y.numel(); ++i)
        EXPECT_NEAR(y.data()[i], (a.data()[i] + b.data()[i] + c.data()[i]) / 3.0, 1e-12);
}

TEST(MoELayer, HardGateReturnsChosenExpertExactly) {
    Rng rng(8);
    std::vector<FeedForward<double>> ex{FeedForward<double>(3, 4, rng), FeedForward<double>(3, 4, rng)};
    auto layer = layer_with(ex, 1);
    Td x({1, 3}, {0.5, -1.0, 2.0});
    // logits (+50, −50)·x_2 sends the token to expert 0 with gate 1 after renormalisation.
    layer.router.weight.mutable_data()[2] = 50.0;
    layer.router.weight.mutable_data()[5] = -50.0;
    auto y = layer(x).y, ref = ex[0](x);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y.data()[i], ref.data()[i]);
}

TEST(MoELayer, MismatchedExpertShapesRejected) {
    Rng rng(9);
    auto layer = layer_with({FeedForward<double>(3, 4, rng), FeedForward<double>(3, 5, rng)}, 1);
    EXPECT_THROW(layer(Td({2, 3})), ShapeError);
}

RoutingDecision<double> from_probs(std::vector<double> p, std::size_t e) {
    const std::size_t n = p.size() / e;
    return decide(Td({n, e}, std::move(p)), MoEConfig{e, 1});
}

TEST(BalanceLoss, UniformRoutingGivesOne) {
    for (std::size_t e : {2u, 3u, 4u, 7u}) {
        // Uniform probabilities tie everywhere, so assign token t to expert t by hand.
        std::vector<double> p(e * e, 1.0 / e);
        auto d = from_probs(p, e);
        for (std::size_t t = 0; t < e; ++t) d.selected[t] = t;
        LoadBalanceStats st;
        EXPECT_NEAR(load_balance_loss(d, &st).item(), 1.0, 1e-12);
        for (double f : st.F) EXPECT_DOUBLE_EQ(f, 1.0 / e);
    }
}

TEST(BalanceLoss, DegenerateRoutingGivesE) {
    std::vector<double> p;
    for (int t = 0; t < 5; ++t) p.insert(p.end(), {1.0, 0.0, 0.0, 0.0});
    LoadBalanceStats st;
    EXPECT_NEAR(load_balance_loss(from_probs(p, 4), &st).item(), 4.0, 1e-12);
    EXPECT_EQ(st.F, (std::vector<double>{1, 0, 0, 0}));
}

TEST(BalanceLoss, TwoExpertsTwoTokens) {
    LoadBalanceStats st;
    EXPECT_NEAR(load_balance_loss(from_probs({0.6, 0.4, 0.8, 0.2}, 2), &st).item(), 1.4, 1e-12);
    EXPECT_EQ(st.F, (std::vector<double>{1.0, 0.0}));
    EXPECT_NEAR(st.G[0], 0.7, 1e-15);
    EXPECT_NEAR(st.G[1], 0.3, 1e-15);
}

TEST(BalanceLoss, GradientFlowsThroughGOnly) {
    Rng rng(10);
    Router<double> r(5, 4);
    rng.fill_normal<double>(r.weight.mutable_data(), 2.0);
    Td x({6, 5});
    rng.fill_normal<double>(x.mutable_data());
    const MoEConfig cfg{4, 2};
    auto f = [=] { return load_balance_loss(route(r, x, cfg)); };
    auto report = grad_check(f, {{"router", r.weight}});
    EXPECT_TRUE(report.passed) << report.worst_rel_error;
    double norm = 0.0;
    for (double g : r.weight.grad()) norm += std::abs(g);
    EXPECT_GT(norm, 0.0);
}

TEST(BalanceLoss, NoTokensIsAnError) { EXPECT_THROW(load_balance_loss(RoutingDecision<double>{}), Error); }

template <typename T>
double max_conversion_gap(std::size_t e, std::size_t k, std::uint64_t seed) {
    Rng rng(seed);
    TransformerLM<T> dense(toy_config(), rng);
    auto moe = convert_dense_to_moe(dense, MoEConfig{e, k});
    double gap = 0.0;
    for (int b = 0; b < 5; ++b) {
        auto ids = random_ids(rng, 3 * 7, 13);
        auto a = dense.forward(ids, 3, 7).logits, m = moe.forward(ids, 3, 7).logits;
        for (std::size_t i = 0; i < a.numel(); ++i)
            gap = std::max(gap, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(m.data()[i])));
    }
    return gap;
}

TEST(Conversion, LogitsMatchDenseForEveryTopK) {
    for (std::size_t e : {2u, 3u, 4u})
        for (std::size_t k = 1; k <= e; ++k) {
            EXPECT_LE(max_conversion_gap<double>(e, k, 100 + e * 10 + k), 1e-12) << "E=" << e << " k=" << k;
            EXPECT_LE(max_conversion_gap<float>(e, k, 200 + e * 10 + k), 1e-6) << "E=" << e << " k=" << k;
        }
}

TEST(Conversion, ExpertsAreBitwiseCopiesAndRouterIsZero) {
    Rng rng(11);
    TransformerLM<double> dense(toy_config(), rng);
    auto moe = convert_dense_to_moe(dense, MoEConfig::e4_top2());
    for (std::size_t l = 0; l < 2; ++l) {
        const auto& layer = *moe.blocks()[l].moe;
        const auto& ffn = dense.blocks()[l].ffn;
        const auto& e3 = layer.experts[3];
        EXPECT_TRUE(std::equal(e3.up.weight.data().begin(), e3.up.weight.data().end(), ffn.up.weight.data().begin()));
        EXPECT_TRUE(std::equal(e3.down.bias.data().begin(), e3.down.bias.data().end(), ffn.down.bias.data().begin()));
        EXPECT_NE(e3.up.weight.node(), ffn.up.weight.node());
        for (double w : layer.router.weight.data()) EXPECT_EQ(w, 0.0);
    }
}

TEST(Conversion, ParameterCountArithmetic) {
    Rng rng(12);
    const auto cfg = toy_config();
    TransformerLM<double> dense(cfg, rng);
    for (std::size_t e : {2u, 4u}) {
        auto moe = convert_dense_to_moe(dense, MoEConfig{e, 2});
        const std::size_t expected = count_elements(dense.parameters()) +
                                     cfg.n_layers * ((e - 1) * ffn_param_count(cfg.embed_dim, cfg.ffn_hidden) +
                                                     e * cfg.embed_dim);
        EXPECT_EQ(count_elements(moe.parameters()), expected);
    }
}

TEST(LoRA, ZeroInitLeavesOutputUnchanged) {
    Rng rng(13);
    TransformerLM<double> dense(toy_config(), rng);
    auto moe = convert_dense_to_moe(dense, MoEConfig::e4_top2());
    auto ids = random_ids(rng, 2 * 5, 13);
    auto before = moe.forward(ids, 2, 5).logits;
    attach_lora(moe, LoRAConfig{}, rng);
    auto after = moe.forward(ids, 2, 5).logits;
    for (std::size_t i = 0; i < before.numel(); ++i) EXPECT_EQ(before.data()[i], after.data()[i]);
}

TEST(LoRA, OneByOneEffectiveWeight) {
    auto lin = Linear<double>::zeros(1, 1, false);
    lin.lora_a = Td({1, 1}, std::vector<double>{1.0});
    lin.lora_b = Td({1, 1}, std::vector<double>{1.0});
    lin.lora_scale = LoRAConfig{.rank = 1, .alpha = 2.0}.scaling();
    EXPECT_EQ(lin.effective_weight().item(), 2.0);
    EXPECT_EQ(lin(Td({1, 1}, std::vector<double>{3.0})).item(), 6.0);
}

TEST(LoRA, FreezesBaseAndKeepsRoutersTrainable) {
    Rng rng(14);
    DenseTransformerConfig cfg;
    cfg.vocab_size = 28;
    TransformerLM<float> dense(cfg, rng);
    auto moe = convert_dense_to_moe(dense, MoEConfig::e4_top2());
    attach_lora(moe, LoRAConfig{}, rng);
    for (const auto& p : moe.parameters()) {
        const bool expect = p.name.ends_with("lora_a") || p.name.ends_with("lora_b") || p.name.ends_with("router");
        EXPECT_EQ(p.tensor.requires_grad(), expect) << p.name;
    }
    const double frac = static_cast<double>(count_elements(moe.parameters(), true)) /
                        static_cast<double>(count_elements(moe.parameters()));
    EXPECT_LT(frac, 0.10);
}

TEST(LoRA, RankAboveMatrixDimsRejected) {
    Rng rng(15);
    TransformerLM<double> lm(toy_config(), rng);
    EXPECT_THROW(attach_lora(lm, LoRAConfig{.rank = 17, .alpha = 34}, rng), ConfigError);
}

TEST(Corpus, DeterministicAndInVocabulary) {
    EXPECT_EQ(generate_text(CorpusDomain::Tabletop, 3, 500), generate_text(CorpusDomain::Tabletop, 3, 500));
    EXPECT_NE(generate_text(CorpusDomain::General, 3, 500), generate_text(CorpusDomain::General, 4, 500));
    auto text = generate_text(CorpusDomain::General, 1, 2000);
    EXPECT_EQ(decode_text(encode_text(text)), text);
    EXPECT_THROW(encode_char('!'), Error);
}

TEST(GradCheck, MoELanguageModel) {
    auto r = run_moe_lm_grad_check(1);
    EXPECT_TRUE(r.report.passed) << r.report.worst_rel_error;
    EXPECT_LT(r.report.worst_rel_error, 1e-4);
}

LMTrainConfig quick_train(double coef) {
    LMTrainConfig c;
    c.epochs = 4;
    c.steps_per_epoch = 15;
    c.batch_size = 8;
    c.seq_len = 16;
    c.lr = 3e-3;
    c.balance_coefficient = coef;
    c.val_windows = 16;
    c.seed = 3;
    return c;
}

LMTrainResult train_with_forced_router(double coefficient) {
    Rng rng(16);
    DenseTransformerConfig cfg;
    cfg.vocab_size = 28;
    cfg.embed_dim = 32;
    cfg.ffn_hidden = 64;
    cfg.max_seq_len = 16;
    TransformerLM<float> dense(cfg, rng);
    auto corpus = make_corpus(CorpusDomain::Tabletop, 1, 20000, 4000);
    auto moe = convert_dense_to_moe(dense, MoEConfig::e4_top2());
    attach_lora(moe, LoRAConfig{}, rng);
    // Point every router's expert-0 row along the mean FFN input.
    auto probe = sample_windows(corpus.train, 8, 16, rng);
    std::vector<std::int32_t> inputs;
    for (std::size_t b = 0; b < 8; ++b) inputs.insert(inputs.end(), probe.begin() + b * 17, probe.begin() + b * 17 + 16);
    auto out = moe.forward(inputs, 8, 16);
    for (std::size_t l = 0; l < moe.blocks().size(); ++l) {
        auto m = mean_rows(out.ffn_inputs[l]);
        double norm = 0;
        for (float v : m.data()) norm += double(v) * v;
        auto w = moe.blocks()[l].moe->router.weight.mutable_data();
        for (std::size_t d = 0; d < cfg.embed_dim; ++d) w[d] = static_cast<float>(0.3 * m.data()[d] / std::sqrt(norm));
    }
    auto tc = quick_train(coefficient);
    tc.epochs = 6;
    return train_lm(moe, corpus, tc);
}

TEST(Finetune, BalanceLossUndoesForcedCollapse) {
    auto collapsed = train_with_forced_router(0.0);
    auto balanced = train_with_forced_router(0.1);
    EXPECT_GT(collapsed.rows.front().F[0], 0.9);
    EXPECT_GT(balanced.rows.front().F[0], 0.5);
    const auto& c = collapsed.rows.back();
    const auto& b = balanced.rows.back();
    EXPECT_GT(*std::max_element(c.F.begin(), c.F.end()), 0.6);
    EXPECT_GT(c.balance_loss, 1.4);
    EXPECT_LT(*std::max_element(b.F.begin(), b.F.end()), 0.45);
    EXPECT_LT(b.balance_loss, 1.1);
}

TEST(Finetune, CsvRerunIsIdentical) {
    auto run = [](const std::filesystem::path& path) {
        Rng rng(17);
        DenseTransformerConfig cfg;
        cfg.vocab_size = 28;
        cfg.embed_dim = 16;
        cfg.ffn_hidden = 32;
        cfg.max_seq_len = 16;
        TransformerLM<float> dense(cfg, rng);
        auto moe = convert_dense_to_moe(dense, MoEConfig::e4_top2());
        attach_lora(moe, LoRAConfig{}, rng);
        auto corpus = make_corpus(CorpusDomain::Tabletop, 2, 10000, 2000);
        auto cfg_t = quick_train(0.01);
        cfg_t.epochs = 2;
        write_lm_csv(path, train_lm(moe, corpus, cfg_t).rows, 4);
        std::ifstream in(path);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    auto dir = std::filesystem::temp_directory_path();
    auto a = run(dir / "posemoe_lm_a.csv"), b = run(dir / "posemoe_lm_b.csv");
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.substr(0, a.find('\n')), "epoch,train_ce,val_ce,balance_loss,F_0,F_1,F_2,F_3");
}

}  // namespace
