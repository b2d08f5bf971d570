// SPDX-License-Identifier: Apache-2.0
// softmax, layer norm, cross-entropy, attention, sinusoidal features.

#include <cmath>
#include <limits>

#include "ops_common.hpp"

namespace posemoe {

using detail::grad_target;
using detail::NodePtr;

namespace {

template <typename T>
void softmax_row(const T* in, T* out, std::size_t n) {
    T mx = in[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = std::exp(in[j] - mx);
        s += out[j];
    }
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

// dx = y ⊙ (dy − ⟨dy, y⟩)
template <typename T>
void softmax_row_backward(const T* y, const T* dy, T* dx, std::size_t n) {
    T dot = T(0);
    for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
    for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    const std::size_t d = x.shape().back(), rows = x.numel() / d;
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) softmax_row(x.data().data() + r * d, out.data() + r * d, d);
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>("softmax", x.shape(), std::move(out), {x}, [px, rows, d](Node<T>& self) {
        if (!px) return;
        T* g = px->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            softmax_row_backward(self.value.data() + r * d, self.grad.data() + r * d, g + r * d, d);
    });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const std::size_t d = x.shape().back(), rows = x.numel() / d;
    if (gamma.defined() && (gamma.rank() != 1 || gamma.dim(0) != d)) {
        detail::throw_shape("layer_norm", x.shape(), gamma.shape(), "gamma must be [D]");
    }
    if (beta.defined() && (beta.rank() != 1 || beta.dim(0) != d)) {
        detail::throw_shape("layer_norm", x.shape(), beta.shape(), "beta must be [D]");
    }
    std::vector<T> xhat(x.numel()), rstd(rows), out(x.numel());
    const T* xv = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv + r * d;
        T mu = T(0);
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(d);
        rstd[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (row[j] - mu) * rstd[r];
            xhat[r * d + j] = h;
            T y = h;
            if (gamma.defined()) y *= gamma.data()[j];
            if (beta.defined()) y += beta.data()[j];
            out[r * d + j] = y;
        }
    }
    NodePtr<T> px = grad_target(x), pg = grad_target(gamma), pb = grad_target(beta);
    return detail::make_result<T>(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
        [px, pg, pb, gn = gamma.defined() ? gamma.node_ptr() : nullptr, xhat = std::move(xhat), rstd = std::move(rstd),
         rows, d](Node<T>& self) {
            const T* dy = self.grad.data();
            if (pg) {
                T* g = pg->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) g[j] += dy[r * d + j] * xhat[r * d + j];
            }
            if (pb) {
                T* g = pb->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) g[j] += dy[r * d + j];
            }
            if (px) {
                T* g = px->grad_buffer();
                std::vector<T> dxhat(d);
                const T inv_d = T(1) / static_cast<T>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    T m1 = T(0), m2 = T(0);
                    for (std::size_t j = 0; j < d; ++j) {
                        dxhat[j] = dy[r * d + j] * (gn ? gn->value[j] : T(1));
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xhat[r * d + j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for (std::size_t j = 0; j < d; ++j)
                        g[r * d + j] += rstd[r] * (dxhat[j] - m1 - xhat[r * d + j] * m2);
                }
            }
        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
    if (logits.rank() != 2) detail::throw_shape("cross_entropy", logits.shape(), "logits must be [N, V]");
    const std::size_t n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != n) detail::throw_shape("cross_entropy", logits.shape(), Shape{targets.size()}, "targets");
    std::vector<T> probs(n * v);
    T loss = T(0);
    for (std::size_t r = 0; r < n; ++r) {
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
            throw ShapeError("cross_entropy: target " + std::to_string(targets[r]) + " out of range for " +
                             shape_str(logits.shape()));
        }
        softmax_row(logits.data().data() + r * v, probs.data() + r * v, v);
        // log p computed from the logits for accuracy when p underflows.
        const T* row = logits.data().data() + r * v;
        T mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T s = T(0);
        for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        loss += (mx + std::log(s)) - row[targets[r]];
    }
    loss /= static_cast<T>(n);
    NodePtr<T> pl = grad_target(logits);
    return detail::make_result<T>(
        "cross_entropy", {1}, {loss}, {logits},
        [pl, probs = std::move(probs), tg = std::vector<std::int32_t>(targets.begin(), targets.end()), n,
         v](Node<T>& self) {
            if (!pl) return;
            T* g = pl->grad_buffer();
            const T s = self.grad[0] / static_cast<T>(n);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < v; ++j) g[r * v + j] += s * probs[r * v + j];
                g[r * v + static_cast<std::size_t>(tg[r])] -= s;
            }
        });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t n_heads, bool causal,
                    std::span<const std::uint8_t> key_valid) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
        detail::throw_shape("attention", q.shape(), k.shape(), "q, k, v must be [G, S, D]");
    }
    const std::size_t g_count = q.dim(0), sq = q.dim(1), dm = q.dim(2), sk = k.dim(1);
    if (k.dim(0) != g_count || k.dim(2) != dm) detail::throw_shape("attention", q.shape(), k.shape(), "q vs k");
    if (v.shape() != k.shape()) detail::throw_shape("attention", k.shape(), v.shape(), "k vs v");
    if (n_heads == 0 || dm % n_heads != 0) detail::throw_shape("attention", q.shape(), "D not divisible by n_heads");
    if (causal && sq != sk) detail::throw_shape("attention", q.shape(), k.shape(), "causal mask needs Sq == Sk");
    if (!key_valid.empty() && key_valid.size() != g_count * sk) {
        detail::throw_shape("attention", k.shape(), Shape{key_valid.size()}, "key mask size");
    }
    const std::size_t dh = dm / n_heads;
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));
    const T neg_inf = -std::numeric_limits<T>::infinity();
    const auto& K = kernels::active<T>();

    std::vector<T> probs(g_count * n_heads * sq * sk);
    std::vector<T> out(g_count * sq * dm, T(0));
    std::vector<T> scores(sk);
    const T* qv = q.data().data();
    const T* kv = k.data().data();
    const T* vv = v.data().data();
    for (std::size_t g = 0; g < g_count; ++g) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t i = 0; i < sq; ++i) {
                const T* qi = qv + (g * sq + i) * dm + h * dh;
                bool any = false;
                for (std::size_t j = 0; j < sk; ++j) {
                    const bool masked = (causal && j > i) || (!key_valid.empty() && key_valid[g * sk + j] == 0);
                    if (masked) {
                        scores[j] = neg_inf;
                    } else {
                        scores[j] = K.dot(dh, qi, kv + (g * sk + j) * dm + h * dh) * sc;
                        any = true;
                    }
                }
                if (!any) throw ShapeError("attention: query has no visible key (group " + std::to_string(g) + ")");
                T* p = probs.data() + ((g * n_heads + h) * sq + i) * sk;
                softmax_row(scores.data(), p, sk);
                T* oi = out.data() + (g * sq + i) * dm + h * dh;
                for (std::size_t j = 0; j < sk; ++j) {
                    if (p[j] != T(0)) K.axpy(dh, p[j], vv + (g * sk + j) * dm + h * dh, oi);
                }
            }
        }
    }

    NodePtr<T> pq = grad_target(q), pk = grad_target(k), pv = grad_target(v);
    return detail::make_result<T>(
        "attention", {g_count, sq, dm}, std::move(out), {q, k, v},
        [pq, pk, pv, qn = q.node_ptr(), kn = k.node_ptr(), vn = v.node_ptr(), probs = std::move(probs), g_count,
         n_heads, sq, sk, dm, dh, sc](Node<T>& self) {
            const auto& K = kernels::active<T>();
            const T* dout = self.grad.data();
            T* dq = pq ? pq->grad_buffer() : nullptr;
            T* dk = pk ? pk->grad_buffer() : nullptr;
            T* dv = pv ? pv->grad_buffer() : nullptr;
            std::vector<T> dp(sk), ds(sk);
            for (std::size_t g = 0; g < g_count; ++g) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    for (std::size_t i = 0; i < sq; ++i) {
                        const T* p = probs.data() + ((g * n_heads + h) * sq + i) * sk;
                        const T* doi = dout + (g * sq + i) * dm + h * dh;
                        T dot = T(0);
                        for (std::size_t j = 0; j < sk; ++j) {
                            const std::size_t kv_off = (g * sk + j) * dm + h * dh;
                            if (dv && p[j] != T(0)) K.axpy(dh, p[j], doi, dv + kv_off);
                            dp[j] = K.dot(dh, doi, vn->value.data() + kv_off);
                            dot += p[j] * dp[j];
                        }
                        for (std::size_t j = 0; j < sk; ++j) ds[j] = p[j] * (dp[j] - dot) * sc;
                        const std::size_t q_off = (g * sq + i) * dm + h * dh;
                        for (std::size_t j = 0; j < sk; ++j) {
                            if (ds[j] == T(0)) continue;
                            const std::size_t kv_off = (g * sk + j) * dm + h * dh;
                            if (dq) K.axpy(dh, ds[j], kn->value.data() + kv_off, dq + q_off);
                            if (dk) K.axpy(dh, ds[j], qn->value.data() + q_off, dk + kv_off);
                        }
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> sinusoidal_features(std::span<const T> values, std::size_t dim, T max_period) {
    if (dim == 0 || dim % 2 != 0) throw ShapeError("sinusoidal_features: dim must be even and positive");
    if (values.empty()) throw ShapeError("sinusoidal_features: no values");
    const std::size_t half = dim / 2;
    std::vector<T> out(values.size() * dim);
    for (std::size_t n = 0; n < values.size(); ++n) {
        for (std::size_t i = 0; i < half; ++i) {
            const T freq = std::exp(-std::log(max_period) * static_cast<T>(i) / static_cast<T>(half));
            const T arg = values[n] * freq;
            out[n * dim + i] = std::sin(arg);
            out[n * dim + half + i] = std::cos(arg);
        }
    }
    return detail::make_result<T>("sinusoidal_features", {values.size(), dim}, std::move(out), {}, {});
}

#define POSEMOE_INSTANTIATE(T)                                                                          \
    template Tensor<T> softmax(const Tensor<T>&);                                                       \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);             \
    template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);                  \
    template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, bool, \
                                 std::span<const std::uint8_t>);                                        \
    template Tensor<T> sinusoidal_features(std::span<const T>, std::size_t, T);

POSEMOE_INSTANTIATE(float)
POSEMOE_INSTANTIATE(double)
#undef POSEMOE_INSTANTIATE

}  // namespace posemoe
