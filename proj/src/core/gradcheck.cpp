// SPDX-License-Identifier: Apache-2.0

#include "posemoe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "posemoe/errors.hpp"

namespace posemoe {

GradCheckReport grad_check(const std::function<Tensor<double>()>& f, const ParamList<double>& params,
                           const GradCheckOptions& options) {
    GradCheckReport report;
    report.tol = options.tol;

    for (const auto& p : params) {
        auto t = p.tensor;
        t.zero_grad();
    }
    Tensor<double> loss = f();
    backward(loss);
    const double floor = options.rel_floor * std::max(1.0, std::abs(loss.item()));

    Rng rng(options.seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto param = params[pi].tensor;
        GradCheckEntry entry;
        entry.name = params[pi].name;
        std::vector<double> analytic(param.numel(), 0.0);
        if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());

        std::vector<std::size_t> idx(param.numel());
        std::iota(idx.begin(), idx.end(), 0);
        if (options.max_entries_per_param > 0 && idx.size() > options.max_entries_per_param) {
            for (std::size_t i = 0; i < options.max_entries_per_param; ++i) {
                std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
            }
            idx.resize(options.max_entries_per_param);
        }

        auto values = param.mutable_data();
        auto eval = [&](std::size_t j) {
            try {
                return f().item();
            } catch (const NonFiniteError& e) {
                throw NonFiniteError("grad_check: non-finite objective when perturbing parameter " +
                                     std::to_string(pi) + " (" + entry.name + ") entry " + std::to_string(j) + ": " +
                                     e.what());
            }
        };
        for (auto j : idx) {
            const double saved = values[j];
            values[j] = saved + options.h;
            const double fp = eval(j);
            values[j] = saved - options.h;
            const double fm = eval(j);
            values[j] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NonFiniteError("grad_check: non-finite objective when perturbing parameter " +
                                     std::to_string(pi) + " (" + entry.name + ") entry " + std::to_string(j));
            }
            const double numeric = (fp - fm) / (2.0 * options.h);
            const double abs_err = std::abs(numeric - analytic[j]);
            const double denom = std::max({std::abs(numeric), std::abs(analytic[j]), floor});
            entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
            entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
            ++entry.checked;
        }
        report.worst_rel_error = std::max(report.worst_rel_error, entry.max_rel_error);
        report.entries.push_back(std::move(entry));
    }
    report.passed = report.worst_rel_error < options.tol;
    return report;
}

}  // namespace posemoe
