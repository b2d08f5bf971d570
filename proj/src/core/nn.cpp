// SPDX-License-Identifier: Apache-2.0

#include "posemoe/nn.hpp"

#include <cmath>

#include "posemoe/errors.hpp"

namespace posemoe {

template <typename T>
Tensor<T> random_normal(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor<T> t(std::move(shape), requires_grad);
    rng.fill_normal<T>(t.mutable_data(), stddev);
    return t;
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Tensor<T>({out, in}, true);
    rng.fill_uniform<T>(weight.mutable_data(), -bound, bound);
    if (with_bias) {
        bias = Tensor<T>({out}, true);
        rng.fill_uniform<T>(bias.mutable_data(), -bound, bound);
    }
}

template <typename T>
Linear<T> Linear<T>::zeros(std::size_t in, std::size_t out, bool with_bias) {
    Linear l;
    l.weight = Tensor<T>({out, in}, true);
    if (with_bias) l.bias = Tensor<T>({out}, true);
    return l;
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
    Tensor<T> y = linear(x, weight, bias);
    if (has_lora()) y = add(y, scale(linear(linear(x, lora_a), lora_b), lora_scale));
    return y;
}

template <typename T>
Tensor<T> Linear<T>::effective_weight() const {
    Tensor<T> w = weight.detach();
    if (has_lora()) w = add(w, scale(matmul(lora_b.detach(), lora_a.detach()), lora_scale));
    return w;
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
    if (has_lora()) {
        out.push_back({prefix + ".lora_a", lora_a});
        out.push_back({prefix + ".lora_b", lora_b});
    }
}

template <typename T>
Linear<T> Linear<T>::deep_copy() const {
    Linear l;
    l.weight = copy_param(weight);
    l.bias = copy_param(bias);
    l.lora_a = copy_param(lora_a);
    l.lora_b = copy_param(lora_b);
    l.lora_scale = lora_scale;
    return l;
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim)
    : gamma(Tensor<T>::full({dim}, T(1), true)), beta(Tensor<T>({dim}, true)) {}

template <typename T>
void LayerNorm<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template Tensor<float> random_normal<float>(Shape, Rng&, double, bool);
template Tensor<double> random_normal<double>(Shape, Rng&, double, bool);

}  // namespace posemoe
