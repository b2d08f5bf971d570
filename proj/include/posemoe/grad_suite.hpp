// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "posemoe/gradcheck.hpp"

namespace posemoe {

struct GradSuiteResult {
    std::string op;
    GradCheckReport report;
};

/// Finite-difference checks of every differentiable primitive on random
/// 64-bit inputs with random extents (rank up to 4). Each case reduces the op
/// output to a scalar through a fixed random weighting.
std::vector<GradSuiteResult> run_primitive_grad_suite(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace posemoe
