// SPDX-License-Identifier: Apache-2.0

#include "posemoe/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "posemoe/errors.hpp"
#include "posemoe/kernels.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace posemoe {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
    }
}

std::atomic<const char*> g_fault_op{nullptr};

#if defined(__GLIBC__)
// Graph buffers are allocated and released every step. Keeping them on the
// heap instead of fresh mmap regions avoids a page fault per touched page.
const bool g_heap_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();
#endif
thread_local bool t_grad_enabled = true;

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
    validate_shape(shape);
    node_->value.assign(shape_numel(shape), T(0));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                         " values");
    }
    detail::check_finite<T>("tensor", values, "initial values");
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
    node_->grad.assign(node_->value.size(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    auto n = std::make_shared<Node<T>>();
    n->shape = node_->shape;
    n->value = node_->value;
    return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
    auto t = detach();
    t.set_requires_grad(requires_grad);
    return t;
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw Error("backward: undefined tensor");
    if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    Node<T>* root = loss.node();
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients are scratch for this pass; leaves accumulate.
    for (Node<T>* n : order) {
        if (n->backward_fn) n->grad.assign(n->value.size(), T(0));
    }
    root->grad_buffer()[0] += T(1);

    const char* fault = g_fault_op.load();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->backward_fn) continue;
        if (fault && std::strcmp(fault, n->op) == 0) {
            for (auto& g : n->grad) g *= T(1.5);
        }
        n->backward_fn(*n);
    }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

namespace debug {
void inject_backward_fault(const char* op) { g_fault_op.store(op); }
const char* injected_backward_fault() { return g_fault_op.load(); }
}  // namespace debug

namespace detail {

void throw_shape(const char* op, const Shape& a, const Shape& b, const std::string& what) {
    std::string msg = std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b);
    if (!what.empty()) msg += " (" + what + ")";
    throw ShapeError(msg);
}

void throw_shape(const char* op, const Shape& a, const std::string& what) {
    throw ShapeError(std::string(op) + ": invalid shape " + shape_str(a) + " (" + what + ")");
}

template <typename T>
void check_finite(const char* op, std::span<const T> values, const char* role) {
    // A finite sum implies finite terms; only a non-finite sum needs the scan.
    if (std::isfinite(kernels::active<T>().sum(values.size(), values.data()))) return;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw NonFiniteError(std::string(op) + ": non-finite value in " + role + " at flat index " +
                                 std::to_string(i));
        }
    }
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
    check_finite<T>(op, value, "output");
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    bool needs = false;
    if (!t_grad_enabled) parents.clear();
    for (const auto& p : parents) needs = needs || (p.defined() && p.requires_grad());
    if (needs) {
        node->requires_grad = true;
        for (const auto& p : parents) {
            if (p.defined()) node->parents.push_back(p.node_ptr());
        }
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(node));
}

template void check_finite<float>(const char*, std::span<const float>, const char*);
template void check_finite<double>(const char*, std::span<const double>, const char*);
template Tensor<float> make_result<float>(const char*, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                          std::function<void(Node<float>&)>);
template Tensor<double> make_result<double>(const char*, Shape, std::vector<double>, std::vector<Tensor<double>>,
                                            std::function<void(Node<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace posemoe
