// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op validates shapes (ShapeError naming the
// op and the offending shapes), rejects non-finite results (NonFiniteError)
// and registers a backward rule when an input requires a gradient.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "posemoe/tensor.hpp"

namespace posemoe {

// ---- linear algebra -------------------------------------------------------

/// 2-D matrix product with optional transposition of either operand.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);

/// y = x·Wᵀ + bias for x [..., in], weight [out, in], bias [out] (optional).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

// ---- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

// ---- layout ---------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// General axis permutation; out.shape[i] = x.shape[perm[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& sizes);
/// Repeats each leading-axis row `times` times consecutively: [G, ...] → [G·times, ...].
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times);
/// Rows of a [N, D] tensor by index (duplicates allowed).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);
/// out[rows[i]] += src[i]; out has n_rows rows.
template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& src, std::span<const std::size_t> rows, std::size_t n_rows);
/// Flat element gather, returns a 1-D tensor.
template <typename T>
Tensor<T> take(const Tensor<T>& x, std::span<const std::size_t> flat_indices);
/// x [N, D] scaled row-wise by s [N].
template <typename T>
Tensor<T> row_scale(const Tensor<T>& x, const Tensor<T>& s);

// ---- reductions and normalisation -----------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// Mean over the leading axis of a [N, D] tensor → [D].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x);
/// Divides every row of a [N, D] tensor by its sum.
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x);
/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);
/// Normalises over the last axis; gamma/beta [D] are optional.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma = {}, const Tensor<T>& beta = {}, T eps = T(1e-5));

// ---- losses ---------------------------------------------------------------

template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target);
/// Σ w·(pred − target)² with an optional constant per-element weight.
template <typename T>
Tensor<T> squared_error_sum(const Tensor<T>& pred, const Tensor<T>& target, std::span<const T> weights = {});
/// Mean negative log-likelihood of `targets` under row-wise softmax(logits [N, V]).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets);

// ---- model building blocks ------------------------------------------------

/// Rows of `table` [V, D] selected by ids → [n, D].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids);

/// Multi-head scaled dot-product attention.
/// q [G, Sq, D], k and v [G, Sk, D], D divisible by n_heads → [G, Sq, D].
/// `causal` masks keys j > i (requires Sq == Sk). `key_valid`, when given,
/// has G·Sk entries; zero entries are masked. Masks are additive −∞ before the
/// softmax. Every query must keep at least one visible key.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t n_heads, bool causal,
                    std::span<const std::uint8_t> key_valid = {});

/// Constant sinusoidal features [n, dim]: first half sin(v·f_i), second half
/// cos(v·f_i), f_i = max_period^(−i/(dim/2)).
template <typename T>
Tensor<T> sinusoidal_features(std::span<const T> values, std::size_t dim, T max_period = T(10000));

}  // namespace posemoe
