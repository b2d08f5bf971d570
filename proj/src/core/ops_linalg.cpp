// SPDX-License-Identifier: Apache-2.0
// matmul, linear, elementwise arithmetic, reductions.

#include <cmath>

#include "ops_common.hpp"

namespace posemoe {

using detail::grad_target;
using detail::NodePtr;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
    if (a.rank() != 2 || b.rank() != 2) detail::throw_shape("matmul", a.shape(), b.shape(), "operands must be 2-D");
    const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
    const std::size_t ka = trans_a ? a.dim(0) : a.dim(1);
    const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
    const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
    if (ka != kb) detail::throw_shape("matmul", a.shape(), b.shape(), "inner dimensions differ");
    const std::size_t k = ka;
    const auto& K = kernels::active<T>();

    // Materialise the effective (non-transposed) operands.
    std::vector<T> a_eff = trans_a ? detail::transposed(a.data().data(), a.dim(0), a.dim(1))
                                   : std::vector<T>(a.data().begin(), a.data().end());
    std::vector<T> b_eff = trans_b ? detail::transposed(b.data().data(), b.dim(0), b.dim(1))
                                   : std::vector<T>(b.data().begin(), b.data().end());
    std::vector<T> out(m * n);
    K.gemm(m, n, k, a_eff.data(), k, b_eff.data(), n, out.data(), n, false);

    NodePtr<T> pa = grad_target(a), pb = grad_target(b);
    return detail::make_result<T>(
        "matmul", {m, n}, std::move(out), {a, b},
        [pa, pb, a_eff = std::move(a_eff), b_eff = std::move(b_eff), m, n, k, trans_a, trans_b](Node<T>& self) {
            const auto& K = kernels::active<T>();
            const T* dc = self.grad.data();
            if (pa) {
                // dA' = dC · B'ᵀ
                std::vector<T> bt = detail::transposed(b_eff.data(), k, n);
                if (!trans_a) {
                    K.gemm(m, k, n, dc, n, bt.data(), k, pa->grad_buffer(), k, true);
                } else {
                    std::vector<T> da(m * k);
                    K.gemm(m, k, n, dc, n, bt.data(), k, da.data(), k, false);
                    detail::add_transposed(da.data(), m, k, pa->grad_buffer());
                }
            }
            if (pb) {
                // dB' = A'ᵀ · dC
                std::vector<T> at = detail::transposed(a_eff.data(), m, k);
                if (!trans_b) {
                    K.gemm(k, n, m, at.data(), m, dc, n, pb->grad_buffer(), n, true);
                } else {
                    std::vector<T> db(k * n);
                    K.gemm(k, n, m, at.data(), m, dc, n, db.data(), n, false);
                    detail::add_transposed(db.data(), k, n, pb->grad_buffer());
                }
            }
        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (weight.rank() != 2) detail::throw_shape("linear", weight.shape(), "weight must be [out, in]");
    const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
    if (x.rank() < 1 || x.shape().back() != in_f) {
        detail::throw_shape("linear", x.shape(), weight.shape(), "last input axis must equal weight in-features");
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f)) {
        detail::throw_shape("linear", bias.shape(), weight.shape(), "bias must be [out]");
    }
    const std::size_t rows = x.numel() / in_f;
    const auto& K = kernels::active<T>();

    std::vector<T> wt = detail::transposed(weight.data().data(), out_f, in_f);
    std::vector<T> out(rows * out_f);
    K.gemm(rows, out_f, in_f, x.data().data(), in_f, wt.data(), out_f, out.data(), out_f, false);
    if (bias.defined()) {
        const T* bp = bias.data().data();
        for (std::size_t r = 0; r < rows; ++r) K.add(out_f, out.data() + r * out_f, bp, out.data() + r * out_f);
    }

    Shape shape = x.shape();
    shape.back() = out_f;
    NodePtr<T> px = grad_target(x), pw = grad_target(weight), pb = grad_target(bias);
    return detail::make_result<T>(
        "linear", std::move(shape), std::move(out), {x, weight, bias},
        [px, pw, pb, xn = x.node_ptr(), wn = weight.node_ptr(), rows, in_f, out_f](Node<T>& self) {
            const auto& K = kernels::active<T>();
            const T* dy = self.grad.data();
            if (px) K.gemm(rows, in_f, out_f, dy, out_f, wn->value.data(), in_f, px->grad_buffer(), in_f, true);
            if (pw) {
                std::vector<T> dyt = detail::transposed(dy, rows, out_f);
                K.gemm(out_f, in_f, rows, dyt.data(), rows, xn->value.data(), in_f, pw->grad_buffer(), in_f, true);
            }
            if (pb) {
                T* g = pb->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) K.add(out_f, g, dy + r * out_f, g);
            }
        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) detail::throw_shape("add", a.shape(), b.shape());
    const auto& K = kernels::active<T>();
    std::vector<T> out(a.numel());
    K.add(out.size(), a.data().data(), b.data().data(), out.data());
    NodePtr<T> pa = grad_target(a), pb = grad_target(b);
    return detail::make_result<T>("add", a.shape(), std::move(out), {a, b}, [pa, pb](Node<T>& self) {
        const auto& K = kernels::active<T>();
        const std::size_t n = self.grad.size();
        if (pa) K.add(n, pa->grad_buffer(), self.grad.data(), pa->grad_buffer());
        if (pb) K.add(n, pb->grad_buffer(), self.grad.data(), pb->grad_buffer());
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) detail::throw_shape("sub", a.shape(), b.shape());
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    NodePtr<T> pa = grad_target(a), pb = grad_target(b);
    return detail::make_result<T>("sub", a.shape(), std::move(out), {a, b}, [pa, pb](Node<T>& self) {
        const auto& K = kernels::active<T>();
        const std::size_t n = self.grad.size();
        if (pa) K.add(n, pa->grad_buffer(), self.grad.data(), pa->grad_buffer());
        if (pb) K.axpy(n, T(-1), self.grad.data(), pb->grad_buffer());
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) detail::throw_shape("mul", a.shape(), b.shape());
    const auto& K = kernels::active<T>();
    std::vector<T> out(a.numel());
    K.mul(out.size(), a.data().data(), b.data().data(), out.data());
    NodePtr<T> pa = grad_target(a), pb = grad_target(b);
    return detail::make_result<T>(
        "mul", a.shape(), std::move(out), {a, b},
        [pa, pb, an = a.node_ptr(), bn = b.node_ptr()](Node<T>& self) {
            const std::size_t n = self.grad.size();
            const T* g = self.grad.data();
            if (pa) {
                T* d = pa->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * bn->value[i];
            }
            if (pb) {
                T* d = pb->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * an->value[i];
            }
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    const auto& K = kernels::active<T>();
    std::vector<T> out(x.numel());
    K.scale(out.size(), factor, x.data().data(), out.data());
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>("scale", x.shape(), std::move(out), {x}, [px, factor](Node<T>& self) {
        if (px) kernels::active<T>().axpy(self.grad.size(), factor, self.grad.data(), px->grad_buffer());
    });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v += offset;
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>("add_scalar", x.shape(), std::move(out), {x}, [px](Node<T>& self) {
        if (px) kernels::active<T>().add(self.grad.size(), px->grad_buffer(), self.grad.data(), px->grad_buffer());
    });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    const std::size_t n = x.numel();
    std::vector<T> out(n);
    std::vector<T> sig(n);
    const T* xv = x.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        sig[i] = T(1) / (T(1) + std::exp(-xv[i]));
        out[i] = xv[i] * sig[i];
    }
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>(
        "silu", x.shape(), std::move(out), {x}, [px, xn = x.node_ptr(), sig = std::move(sig)](Node<T>& self) {
            if (!px) return;
            T* d = px->grad_buffer();
            const T* g = self.grad.data();
            for (std::size_t i = 0; i < sig.size(); ++i) {
                const T s = sig[i];
                d[i] += g[i] * s * (T(1) + xn->value[i] * (T(1) - s));
            }
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    const T total = kernels::active<T>().sum(x.numel(), x.data().data());
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>("sum", {1}, {total}, {x}, [px](Node<T>& self) {
        if (!px) return;
        const T g = self.grad[0];
        T* d = px->grad_buffer();
        for (std::size_t i = 0; i < px->value.size(); ++i) d[i] += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    const T n = static_cast<T>(x.numel());
    const T total = kernels::active<T>().sum(x.numel(), x.data().data()) / n;
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>("mean", {1}, {total}, {x}, [px, n](Node<T>& self) {
        if (!px) return;
        const T g = self.grad[0] / n;
        T* d = px->grad_buffer();
        for (std::size_t i = 0; i < px->value.size(); ++i) d[i] += g;
    });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
    if (x.rank() != 2) detail::throw_shape("mean_rows", x.shape(), "expected [N, D]");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    const auto& K = kernels::active<T>();
    std::vector<T> out(cols, T(0));
    for (std::size_t r = 0; r < rows; ++r) K.add(cols, out.data(), x.data().data() + r * cols, out.data());
    const T inv = T(1) / static_cast<T>(rows);
    for (auto& v : out) v *= inv;
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>("mean_rows", {cols}, std::move(out), {x}, [px, rows, cols, inv](Node<T>& self) {
        if (!px) return;
        const auto& K = kernels::active<T>();
        T* d = px->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) K.axpy(cols, inv, self.grad.data(), d + r * cols);
    });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) detail::throw_shape("mse", pred.shape(), target.shape());
    const std::size_t n = pred.numel();
    std::vector<T> diff(n);
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = pred.data()[i] - target.data()[i];
        acc += diff[i] * diff[i];
    }
    const T inv = T(1) / static_cast<T>(n);
    NodePtr<T> pp = grad_target(pred), pt = grad_target(target);
    return detail::make_result<T>("mse", {1}, {acc * inv}, {pred, target},
                                  [pp, pt, diff = std::move(diff), inv](Node<T>& self) {
                                      const T g = self.grad[0] * T(2) * inv;
                                      const auto& K = kernels::active<T>();
                                      if (pp) K.axpy(diff.size(), g, diff.data(), pp->grad_buffer());
                                      if (pt) K.axpy(diff.size(), -g, diff.data(), pt->grad_buffer());
                                  });
}

template <typename T>
Tensor<T> squared_error_sum(const Tensor<T>& pred, const Tensor<T>& target, std::span<const T> weights) {
    if (pred.shape() != target.shape()) detail::throw_shape("squared_error_sum", pred.shape(), target.shape());
    const std::size_t n = pred.numel();
    if (!weights.empty() && weights.size() != n) {
        detail::throw_shape("squared_error_sum", pred.shape(), Shape{weights.size()}, "weights");
    }
    std::vector<T> wdiff(n);
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T d = pred.data()[i] - target.data()[i];
        const T w = weights.empty() ? T(1) : weights[i];
        wdiff[i] = w * d;
        acc += w * d * d;
    }
    NodePtr<T> pp = grad_target(pred), pt = grad_target(target);
    return detail::make_result<T>("squared_error_sum", {1}, {acc}, {pred, target},
                                  [pp, pt, wdiff = std::move(wdiff)](Node<T>& self) {
                                      const T g = self.grad[0] * T(2);
                                      const auto& K = kernels::active<T>();
                                      if (pp) K.axpy(wdiff.size(), g, wdiff.data(), pp->grad_buffer());
                                      if (pt) K.axpy(wdiff.size(), -g, wdiff.data(), pt->grad_buffer());
                                  });
}

#define POSEMOE_INSTANTIATE(T)                                                                  \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);                 \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> scale(const Tensor<T>&, T);                                             \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                        \
    template Tensor<T> silu(const Tensor<T>&);                                                 \
    template Tensor<T> sum(const Tensor<T>&);                                                  \
    template Tensor<T> mean(const Tensor<T>&);                                                 \
    template Tensor<T> mean_rows(const Tensor<T>&);                                            \
    template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> squared_error_sum(const Tensor<T>&, const Tensor<T>&, std::span<const T>);

POSEMOE_INSTANTIATE(float)
POSEMOE_INSTANTIATE(double)
#undef POSEMOE_INSTANTIATE

}  // namespace posemoe
