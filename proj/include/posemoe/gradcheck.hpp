// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "posemoe/nn.hpp"

namespace posemoe {

struct GradCheckOptions {
    double h = 1e-5;
    double tol = 1e-4;
    /// Denominator floor of the relative error |a − n| / max(|a|, |n|, floor)
    /// with floor = rel_floor·max(1, |f|), so entries whose true gradient is ~0
    /// are judged against the roundoff of the central difference, which grows
    /// with |f|.
    double rel_floor = 1e-6;
    /// 0 checks every entry; otherwise a seeded random subset per parameter.
    std::size_t max_entries_per_param = 0;
    std::uint64_t seed = 0;
};

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst_rel_error = 0.0;
    double tol = 0.0;
    bool passed = true;
};

/// Compares reverse-mode gradients of `f` with central differences
/// (f(θ+h) − f(θ−h)) / 2h, entry by entry. Always 64-bit. `f` must rebuild
/// its graph from the current parameter values on every call.
/// Throws NonFiniteError naming the parameter when f is non-finite at a
/// perturbed point.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f, const ParamList<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace posemoe
