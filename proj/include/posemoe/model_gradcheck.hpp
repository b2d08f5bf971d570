// SPDX-License-Identifier: Apache-2.0
// Finite-difference checks of whole models at toy size, in 64-bit.
#pragma once

#include "posemoe/grad_suite.hpp"

namespace posemoe {

/// MoE LM (E=4, top-2, LoRA on every target, all weights trainable) under
/// cross-entropy plus balance loss. Router weights and tokens are re-drawn
/// until every top-k and argmax boundary clears `min_margin`.
GradSuiteResult run_moe_lm_grad_check(std::uint64_t seed, const GradCheckOptions& options = {},
                                      double min_margin = 1e-3);

/// Pose-DiT at horizon 2 under the masked rectified-flow loss, with random
/// modulation and head weights so every sublayer carries gradient.
GradSuiteResult run_posedit_grad_check(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace posemoe
