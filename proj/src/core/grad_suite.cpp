// SPDX-License-Identifier: Apache-2.0

#include "posemoe/grad_suite.hpp"

#include <functional>

#include "posemoe/ops.hpp"

namespace posemoe {

namespace {

using Td = Tensor<double>;

Td rand_param(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Td t(std::move(shape), true);
    rng.fill_uniform<double>(t.mutable_data(), lo, hi);
    return t;
}

std::size_t extent(Rng& rng, std::size_t lo = 1, std::size_t hi = 4) { return lo + rng.below(hi - lo + 1); }

// Σ w ⊙ y with fixed random w, so no output direction is privileged.
std::function<Td(const Td&)> weighted_sum(Rng& rng) {
    auto cache = std::make_shared<std::vector<double>>();
    auto seed = rng.next_u64();
    return [cache, seed](const Td& y) {
        if (cache->size() != y.numel()) {
            Rng local(seed);
            cache->resize(y.numel());
            local.fill_uniform<double>(*cache, -1.0, 1.0);
        }
        return sum(mul(y, Td(y.shape(), *cache)));
    };
}

}  // namespace

std::vector<GradSuiteResult> run_primitive_grad_suite(std::uint64_t seed, const GradCheckOptions& options) {
    Rng rng(seed);
    std::vector<GradSuiteResult> results;
    auto run = [&](const std::string& op, const ParamList<double>& params, std::function<Td()> f) {
        results.push_back({op, grad_check(f, params, options)});
    };

    {
        for (int variant = 0; variant < 4; ++variant) {
            const bool ta = variant & 1, tb = variant & 2;
            const std::size_t m = extent(rng), k = extent(rng), n = extent(rng);
            Td a = rand_param(rng, ta ? Shape{k, m} : Shape{m, k});
            Td b = rand_param(rng, tb ? Shape{n, k} : Shape{k, n});
            auto red = weighted_sum(rng);
            run(variant == 0 ? "matmul" : "matmul" + std::string(ta ? "_ta" : "") + (tb ? "_tb" : ""),
                {{"a", a}, {"b", b}}, [=] { return red(matmul(a, b, ta, tb)); });
        }
    }
    {
        Td x = rand_param(rng, {extent(rng), extent(rng), extent(rng, 2, 5)});
        Td w = rand_param(rng, {extent(rng), x.dim(2)});
        Td b = rand_param(rng, {w.dim(0)});
        auto red = weighted_sum(rng);
        run("linear", {{"x", x}, {"weight", w}, {"bias", b}}, [=] { return red(linear(x, w, b)); });
    }
    auto random_shape = [&] {
        Shape s(extent(rng, 1, 4));
        for (auto& e : s) e = extent(rng);
        return s;
    };
    {
        Shape s = random_shape();
        Td a = rand_param(rng, s), b = rand_param(rng, s);
        auto red = weighted_sum(rng);
        run("add", {{"a", a}, {"b", b}}, [=] { return red(add(a, b)); });
        run("sub", {{"a", a}, {"b", b}}, [=] { return red(sub(a, b)); });
        run("mul", {{"a", a}, {"b", b}}, [=] { return red(mul(a, b)); });
        run("scale", {{"a", a}}, [=] { return red(scale(a, 1.7)); });
        run("add_scalar", {{"a", a}}, [=] { return red(add_scalar(a, -0.3)); });
        run("silu", {{"a", a}}, [=] { return red(silu(scale(a, 3.0))); });
    }
    {
        Td x = rand_param(rng, {extent(rng, 2, 4), extent(rng), extent(rng, 2, 4), extent(rng)});
        auto red = weighted_sum(rng);
        run("reshape", {{"x", x}}, [=] { return red(reshape(x, {x.dim(0) * x.dim(1), x.dim(2) * x.dim(3)})); });
        auto red2 = weighted_sum(rng);
        run("permute", {{"x", x}}, [=] { return red2(permute(x, {2, 0, 3, 1})); });
        auto red3 = weighted_sum(rng);
        run("slice", {{"x", x}}, [=] { return red3(slice(x, 2, 1, x.dim(2) - 1)); });
        auto red4 = weighted_sum(rng);
        run("split", {{"x", x}}, [=] {
            auto parts = split(x, 0, {1, x.dim(0) - 1});
            return add(red4(parts[0]), sum(parts[1]));
        });
    }
    {
        Td x = rand_param(rng, {extent(rng), extent(rng)});
        auto red = weighted_sum(rng);
        run("transpose", {{"x", x}}, [=] { return red(transpose(x)); });
    }
    {
        const std::size_t g = extent(rng), c = extent(rng);
        Td a = rand_param(rng, {g, extent(rng), c}), b = rand_param(rng, {g, extent(rng), c});
        auto red = weighted_sum(rng);
        run("concat", {{"a", a}, {"b", b}}, [=] { return red(concat<double>({a, b, a}, 1)); });
    }
    {
        Td x = rand_param(rng, {extent(rng), extent(rng), extent(rng)});
        auto red = weighted_sum(rng);
        run("repeat_rows", {{"x", x}}, [=] { return red(repeat_rows(x, 3)); });
    }
    {
        const std::size_t n = extent(rng, 2, 5), d = extent(rng);
        Td x = rand_param(rng, {n, d});
        std::vector<std::size_t> rows{n - 1, 0, n - 1, 1 % n};
        auto red = weighted_sum(rng);
        run("gather_rows", {{"x", x}}, [=] { return red(gather_rows<double>(x, rows)); });
        Td src = rand_param(rng, {rows.size(), d});
        auto red2 = weighted_sum(rng);
        run("scatter_add_rows", {{"src", src}}, [=] { return red2(scatter_add_rows<double>(src, rows, n + 1)); });
        std::vector<std::size_t> flat{0, n * d - 1, 0, d / 2};
        auto red3 = weighted_sum(rng);
        run("take", {{"x", x}}, [=] { return red3(take<double>(x, flat)); });
        Td s = rand_param(rng, {n});
        auto red4 = weighted_sum(rng);
        run("row_scale", {{"x", x}, {"s", s}}, [=] { return red4(row_scale(x, s)); });
        auto red5 = weighted_sum(rng);
        run("mean_rows", {{"x", x}}, [=] { return red5(mean_rows(x)); });
        Td pos = rand_param(rng, {n, d + 1}, 0.5, 1.5);
        auto red6 = weighted_sum(rng);
        run("normalize_rows", {{"x", pos}}, [=] { return red6(normalize_rows(pos)); });
    }
    {
        Shape s = random_shape();
        Td x = rand_param(rng, s);
        run("sum", {{"x", x}}, [=] { return sum(mul(x, x)); });
        run("mean", {{"x", x}}, [=] { return mean(mul(x, x)); });
        auto red = weighted_sum(rng);
        run("softmax", {{"x", x}}, [=] { return red(softmax(scale(x, 2.0))); });
    }
    {
        Td x = rand_param(rng, {extent(rng), extent(rng), extent(rng, 3, 6)});
        Td g = rand_param(rng, {x.dim(2)}, 0.5, 1.5), b = rand_param(rng, {x.dim(2)});
        auto red = weighted_sum(rng);
        run("layer_norm", {{"x", x}, {"gamma", g}, {"beta", b}}, [=] { return red(layer_norm(x, g, b)); });
        auto red2 = weighted_sum(rng);
        run("layer_norm_plain", {{"x", x}}, [=] { return red2(layer_norm(x)); });
    }
    {
        Shape s = random_shape();
        Td p = rand_param(rng, s), t = rand_param(rng, s);
        run("mse", {{"pred", p}, {"target", t}}, [=] { return mse(p, t); });
        std::vector<double> w(p.numel());
        rng.fill_uniform<double>(w, 0.0, 2.0);
        run("squared_error_sum", {{"pred", p}, {"target", t}}, [=] { return squared_error_sum<double>(p, t, w); });
    }
    {
        const std::size_t n = extent(rng, 2, 5), v = extent(rng, 2, 6);
        Td logits = rand_param(rng, {n, v}, -2.0, 2.0);
        std::vector<std::int32_t> targets(n);
        for (auto& t : targets) t = static_cast<std::int32_t>(rng.below(v));
        run("cross_entropy", {{"logits", logits}}, [=] { return cross_entropy<double>(logits, targets); });
        Td table = rand_param(rng, {v, extent(rng)});
        auto red = weighted_sum(rng);
        run("embedding", {{"table", table}}, [=] { return red(embedding<double>(table, targets)); });
    }
    {
        const std::size_t g = extent(rng, 1, 3), s = extent(rng, 2, 5), heads = extent(rng, 1, 2);
        const std::size_t d = heads * extent(rng, 1, 3);
        Td q = rand_param(rng, {g, s, d}), k = rand_param(rng, {g, s, d}), v = rand_param(rng, {g, s, d});
        auto red = weighted_sum(rng);
        run("attention_causal", {{"q", q}, {"k", k}, {"v", v}},
            [=] { return red(attention(q, k, v, heads, true)); });
        const std::size_t sk = extent(rng, 1, 4);
        Td kc = rand_param(rng, {g, sk, d}), vc = rand_param(rng, {g, sk, d});
        std::vector<std::uint8_t> mask(g * sk, 1);
        if (sk > 1) mask[sk - 1] = 0;
        auto red2 = weighted_sum(rng);
        run("attention_cross_masked", {{"q", q}, {"k", kc}, {"v", vc}},
            [=] { return red2(attention<double>(q, kc, vc, heads, false, mask)); });
    }
    return results;
}

}  // namespace posemoe
