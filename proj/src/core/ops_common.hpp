// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the op implementations. Not installed.
#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "posemoe/errors.hpp"
#include "posemoe/kernels.hpp"
#include "posemoe/ops.hpp"
#include "posemoe/tensor.hpp"

namespace posemoe::detail {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// The node to receive a gradient, or null when none is needed.
template <typename T>
NodePtr<T> grad_target(const Tensor<T>& t) {
    return (t.defined() && t.requires_grad()) ? t.node_ptr() : nullptr;
}

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
    std::vector<T> out(rows * cols);
    constexpr std::size_t B = 32;
    for (std::size_t i0 = 0; i0 < rows; i0 += B)
        for (std::size_t j0 = 0; j0 < cols; j0 += B)
            for (std::size_t i = i0; i < std::min(rows, i0 + B); ++i)
                for (std::size_t j = j0; j < std::min(cols, j0 + B); ++j) out[j * rows + i] = src[i * cols + j];
    return out;
}

/// dst[cols × rows] += srcᵀ for src [rows × cols].
template <typename T>
void add_transposed(const T* src, std::size_t rows, std::size_t cols, T* dst) {
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] += src[i * cols + j];
}

}  // namespace posemoe::detail
