// SPDX-License-Identifier: Apache-2.0
// Shape manipulation, gathers and scatters.

#include <numeric>

#include "ops_common.hpp"

namespace posemoe {

using detail::grad_target;
using detail::NodePtr;

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) detail::throw_shape("reshape", x.shape(), shape, "element count differs");
    std::vector<T> out(x.data().begin(), x.data().end());
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>("reshape", std::move(shape), std::move(out), {x}, [px](Node<T>& self) {
        if (px) kernels::active<T>().add(self.grad.size(), px->grad_buffer(), self.grad.data(), px->grad_buffer());
    });
}

namespace {

std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

// For each output flat index, the corresponding input flat index.
std::vector<std::size_t> permutation_map(const Shape& in_shape, const std::vector<std::size_t>& perm) {
    const std::size_t r = in_shape.size();
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
    const auto in_strides = row_major_strides(in_shape);
    std::vector<std::size_t> stride_for_out(r);
    for (std::size_t i = 0; i < r; ++i) stride_for_out[i] = in_strides[perm[i]];
    const std::size_t n = shape_numel(in_shape);
    std::vector<std::size_t> map(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < n; ++o) {
        map[o] = src;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            src += stride_for_out[ax];
            if (idx[ax] < out_shape[ax]) break;
            src -= stride_for_out[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    return map;
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const std::size_t r = x.rank();
    if (perm.size() != r) detail::throw_shape("permute", x.shape(), "permutation length must equal rank");
    std::vector<bool> used(r, false);
    for (auto p : perm) {
        if (p >= r || used[p]) detail::throw_shape("permute", x.shape(), "invalid permutation");
        used[p] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
    auto map = permutation_map(x.shape(), perm);
    std::vector<T> out(x.numel());
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = x.data()[map[o]];
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>("permute", std::move(out_shape), std::move(out), {x},
                                  [px, map = std::move(map)](Node<T>& self) {
                                      if (!px) return;
                                      T* d = px->grad_buffer();
                                      for (std::size_t o = 0; o < map.size(); ++o) d[map[o]] += self.grad[o];
                                  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.rank() != 2) detail::throw_shape("transpose", x.shape(), "expected a 2-D tensor");
    return permute(x, {1, 0});
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = parts.front().shape();
    if (axis >= ref.size()) detail::throw_shape("concat", ref, "axis out of range");
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != ref.size()) detail::throw_shape("concat", ref, p.shape(), "rank differs");
        for (std::size_t i = 0; i < ref.size(); ++i) {
            if (i != axis && p.dim(i) != ref[i]) detail::throw_shape("concat", ref, p.shape(), "non-axis extent differs");
        }
        total += p.dim(axis);
    }
    const std::size_t outer = std::accumulate(ref.begin(), ref.begin() + axis, std::size_t{1}, std::multiplies<>());
    const std::size_t inner = std::accumulate(ref.begin() + axis + 1, ref.end(), std::size_t{1}, std::multiplies<>());
    Shape out_shape = ref;
    out_shape[axis] = total;
    std::vector<T> out(outer * total * inner);
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(p.data().data() + o * w, w, out.data() + o * total * inner + offset);
        }
        offset += w;
        widths.push_back(w);
    }
    std::vector<NodePtr<T>> targets;
    for (const auto& p : parts) targets.push_back(grad_target(p));
    return detail::make_result<T>(
        "concat", std::move(out_shape), std::move(out), parts,
        [targets = std::move(targets), widths = std::move(widths), outer, row = total * inner](Node<T>& self) {
            const auto& K = kernels::active<T>();
            std::size_t offset = 0;
            for (std::size_t i = 0; i < targets.size(); ++i) {
                if (targets[i]) {
                    T* d = targets[i]->grad_buffer();
                    for (std::size_t o = 0; o < outer; ++o) {
                        K.add(widths[i], d + o * widths[i], self.grad.data() + o * row + offset, d + o * widths[i]);
                    }
                }
                offset += widths[i];
            }
        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
    if (axis >= x.rank()) detail::throw_shape("slice", x.shape(), "axis out of range");
    if (length == 0 || start + length > x.dim(axis)) detail::throw_shape("slice", x.shape(), "range out of bounds");
    const Shape& s = x.shape();
    const std::size_t outer = std::accumulate(s.begin(), s.begin() + axis, std::size_t{1}, std::multiplies<>());
    const std::size_t inner = std::accumulate(s.begin() + axis + 1, s.end(), std::size_t{1}, std::multiplies<>());
    const std::size_t row = s[axis] * inner, w = length * inner, off = start * inner;
    Shape out_shape = s;
    out_shape[axis] = length;
    std::vector<T> out(outer * w);
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.data().data() + o * row + off, w, out.data() + o * w);
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>("slice", std::move(out_shape), std::move(out), {x},
                                  [px, outer, row, w, off](Node<T>& self) {
                                      if (!px) return;
                                      const auto& K = kernels::active<T>();
                                      T* d = px->grad_buffer();
                                      for (std::size_t o = 0; o < outer; ++o) {
                                          K.add(w, d + o * row + off, self.grad.data() + o * w, d + o * row + off);
                                      }
                                  });
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& sizes) {
    if (axis >= x.rank()) detail::throw_shape("split", x.shape(), "axis out of range");
    if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != x.dim(axis)) {
        detail::throw_shape("split", x.shape(), "sizes do not sum to the axis extent");
    }
    std::vector<Tensor<T>> out;
    std::size_t start = 0;
    for (auto len : sizes) {
        out.push_back(slice(x, axis, start, len));
        start += len;
    }
    return out;
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times) {
    if (x.rank() < 1 || times == 0) detail::throw_shape("repeat_rows", x.shape(), "need rank >= 1 and times > 0");
    const std::size_t rows = x.dim(0), width = x.numel() / rows;
    Shape out_shape = x.shape();
    out_shape[0] = rows * times;
    std::vector<T> out(rows * times * width);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < times; ++k)
            std::copy_n(x.data().data() + r * width, width, out.data() + (r * times + k) * width);
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>("repeat_rows", std::move(out_shape), std::move(out), {x},
                                  [px, rows, times, width](Node<T>& self) {
                                      if (!px) return;
                                      const auto& K = kernels::active<T>();
                                      T* d = px->grad_buffer();
                                      for (std::size_t r = 0; r < rows; ++r)
                                          for (std::size_t k = 0; k < times; ++k)
                                              K.add(width, d + r * width,
                                                    self.grad.data() + (r * times + k) * width, d + r * width);
                                  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
    if (x.rank() != 2) detail::throw_shape("gather_rows", x.shape(), "expected [N, D]");
    if (rows.empty()) detail::throw_shape("gather_rows", x.shape(), "empty row list");
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<T> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) detail::throw_shape("gather_rows", x.shape(), "row index out of range");
        std::copy_n(x.data().data() + rows[i] * d, d, out.data() + i * d);
    }
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>("gather_rows", {rows.size(), d}, std::move(out), {x},
                                  [px, idx = std::vector<std::size_t>(rows.begin(), rows.end()), d](Node<T>& self) {
                                      if (!px) return;
                                      const auto& K = kernels::active<T>();
                                      T* g = px->grad_buffer();
                                      for (std::size_t i = 0; i < idx.size(); ++i)
                                          K.add(d, g + idx[i] * d, self.grad.data() + i * d, g + idx[i] * d);
                                  });
}

template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& src, std::span<const std::size_t> rows, std::size_t n_rows) {
    if (src.rank() != 2 || src.dim(0) != rows.size()) {
        detail::throw_shape("scatter_add_rows", src.shape(), Shape{rows.size()}, "one index per source row");
    }
    const std::size_t d = src.dim(1);
    std::vector<T> out(n_rows * d, T(0));
    const auto& K = kernels::active<T>();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n_rows) detail::throw_shape("scatter_add_rows", src.shape(), "row index out of range");
        K.add(d, out.data() + rows[i] * d, src.data().data() + i * d, out.data() + rows[i] * d);
    }
    NodePtr<T> ps = grad_target(src);
    return detail::make_result<T>("scatter_add_rows", {n_rows, d}, std::move(out), {src},
                                  [ps, idx = std::vector<std::size_t>(rows.begin(), rows.end()), d](Node<T>& self) {
                                      if (!ps) return;
                                      const auto& K = kernels::active<T>();
                                      T* g = ps->grad_buffer();
                                      for (std::size_t i = 0; i < idx.size(); ++i)
                                          K.add(d, g + i * d, self.grad.data() + idx[i] * d, g + i * d);
                                  });
}

template <typename T>
Tensor<T> take(const Tensor<T>& x, std::span<const std::size_t> flat_indices) {
    if (flat_indices.empty()) detail::throw_shape("take", x.shape(), "empty index list");
    std::vector<T> out(flat_indices.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (flat_indices[i] >= x.numel()) detail::throw_shape("take", x.shape(), "index out of range");
        out[i] = x.data()[flat_indices[i]];
    }
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>(
        "take", {flat_indices.size()}, std::move(out), {x},
        [px, idx = std::vector<std::size_t>(flat_indices.begin(), flat_indices.end())](Node<T>& self) {
            if (!px) return;
            T* g = px->grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
        });
}

template <typename T>
Tensor<T> row_scale(const Tensor<T>& x, const Tensor<T>& s) {
    if (x.rank() != 2 || s.rank() != 1 || s.dim(0) != x.dim(0)) {
        detail::throw_shape("row_scale", x.shape(), s.shape(), "expected x [N, D] and s [N]");
    }
    const std::size_t n = x.dim(0), d = x.dim(1);
    const auto& K = kernels::active<T>();
    std::vector<T> out(n * d);
    for (std::size_t r = 0; r < n; ++r) K.scale(d, s.data()[r], x.data().data() + r * d, out.data() + r * d);
    NodePtr<T> px = grad_target(x), ps = grad_target(s);
    return detail::make_result<T>(
        "row_scale", {n, d}, std::move(out), {x, s},
        [px, ps, xn = x.node_ptr(), sn = s.node_ptr(), n, d](Node<T>& self) {
            const auto& K = kernels::active<T>();
            const T* g = self.grad.data();
            if (px) {
                T* gx = px->grad_buffer();
                for (std::size_t r = 0; r < n; ++r) K.axpy(d, sn->value[r], g + r * d, gx + r * d);
            }
            if (ps) {
                T* gs = ps->grad_buffer();
                for (std::size_t r = 0; r < n; ++r) gs[r] += K.dot(d, g + r * d, xn->value.data() + r * d);
            }
        });
}

template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x) {
    if (x.rank() != 2) detail::throw_shape("normalize_rows", x.shape(), "expected [N, D]");
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<T> out(n * d);
    std::vector<T> sums(n);
    for (std::size_t r = 0; r < n; ++r) {
        T s = T(0);
        for (std::size_t j = 0; j < d; ++j) s += x.data()[r * d + j];
        if (s == T(0)) detail::throw_shape("normalize_rows", x.shape(), "row sums to zero");
        sums[r] = s;
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.data()[r * d + j] / s;
    }
    NodePtr<T> px = grad_target(x);
    return detail::make_result<T>(
        "normalize_rows", {n, d}, std::move(out), {x}, [px, sums = std::move(sums), n, d](Node<T>& self) {
            if (!px) return;
            T* g = px->grad_buffer();
            // y_j = x_j / s  →  dx_j = (dy_j − Σ_k dy_k y_k) / s
            for (std::size_t r = 0; r < n; ++r) {
                T dot = T(0);
                for (std::size_t j = 0; j < d; ++j) dot += self.grad[r * d + j] * self.value[r * d + j];
                for (std::size_t j = 0; j < d; ++j) g[r * d + j] += (self.grad[r * d + j] - dot) / sums[r];
            }
        });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
    if (table.rank() != 2) detail::throw_shape("embedding", table.shape(), "table must be [V, D]");
    if (ids.empty()) detail::throw_shape("embedding", table.shape(), "empty id list");
    const std::size_t v = table.dim(0), d = table.dim(1);
    std::vector<std::size_t> rows(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
            throw ShapeError("embedding: id " + std::to_string(ids[i]) + " out of range for table " +
                             shape_str(table.shape()));
        }
        rows[i] = static_cast<std::size_t>(ids[i]);
    }
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(table.data().data() + rows[i] * d, d, out.data() + i * d);
    NodePtr<T> pt = grad_target(table);
    return detail::make_result<T>("embedding", {ids.size(), d}, std::move(out), {table},
                                  [pt, rows = std::move(rows), d](Node<T>& self) {
                                      if (!pt) return;
                                      const auto& K = kernels::active<T>();
                                      T* g = pt->grad_buffer();
                                      for (std::size_t i = 0; i < rows.size(); ++i)
                                          K.add(d, g + rows[i] * d, self.grad.data() + i * d, g + rows[i] * d);
                                  });
}

#define POSEMOE_INSTANTIATE(T)                                                                          \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                      \
    template Tensor<T> transpose(const Tensor<T>&);                                                     \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                              \
    template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                  \
    template std::vector<Tensor<T>> split(const Tensor<T>&, std::size_t, const std::vector<std::size_t>&); \
    template Tensor<T> repeat_rows(const Tensor<T>&, std::size_t);                                      \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                     \
    template Tensor<T> scatter_add_rows(const Tensor<T>&, std::span<const std::size_t>, std::size_t);   \
    template Tensor<T> take(const Tensor<T>&, std::span<const std::size_t>);                            \
    template Tensor<T> row_scale(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> normalize_rows(const Tensor<T>&);                                                \
    template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>);

POSEMOE_INSTANTIATE(float)
POSEMOE_INSTANTIATE(double)
#undef POSEMOE_INSTANTIATE

}  // namespace posemoe
