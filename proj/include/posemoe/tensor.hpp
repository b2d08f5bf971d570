// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle to a shared graph node. Ops record their inputs
// only when at least one of them requires a gradient, so inference builds no
// graph. backward() accumulates into leaf gradients; callers zero them
// (Tensor::zero_grad or AdamW::zero_grad) before each backward pass.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace posemoe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first written
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    T* grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        return grad.data();
    }
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    /// Zero-filled tensor.
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor scalar(T value, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }
    /// Mutable access to stored values. Intended for leaves (parameters,
    /// inputs); writing into an interior node does not update its consumers.
    std::span<T> mutable_data() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }
    T item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return {node_->grad_buffer(), node_->value.size()}; }
    void zero_grad();

    /// Same values, no graph history, requires_grad = false.
    Tensor detach() const;
    /// Deep copy of the values into a fresh leaf.
    Tensor clone(bool requires_grad = false) const;

    const char* op() const { return node_->op; }
    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Reverse-mode pass from a scalar. Accumulates into every reachable node that
/// requires a gradient. Leaf gradients are not zeroed first.
template <typename T>
void backward(const Tensor<T>& loss);

/// While alive, ops on this thread record no graph.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

namespace debug {
/// Test fixture: scale the upstream gradient of every node produced by `op`
/// by 1.5 before its backward rule runs. Pass nullptr to clear.
void inject_backward_fault(const char* op);
const char* injected_backward_fault();
}  // namespace debug

namespace detail {

/// Builds an op result. Verifies every value is finite and, when any parent
/// requires a gradient, records the parents and the backward rule.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward_fn);

[[noreturn]] void throw_shape(const char* op, const Shape& a, const Shape& b, const std::string& what = {});
[[noreturn]] void throw_shape(const char* op, const Shape& a, const std::string& what);
template <typename T>
void check_finite(const char* op, std::span<const T> values, const char* role);

}  // namespace detail

}  // namespace posemoe
