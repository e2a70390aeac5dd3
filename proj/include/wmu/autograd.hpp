#pragma once

#include "wmu/tensor.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace wmu {

/// One value in the computation graph. Leaves with requires_grad are
/// parameters or inputs under test; interior nodes carry a backward closure
/// that reads `grad` and accumulates into the grads of `inputs`.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    /// Lazily allocated, zero-initialized gradient buffer.
    Tensor<T>& grad_buffer()
    {
        if (grad.shape() != value.shape()) {
            grad = Tensor<T>(value.shape());
        }
        return grad;
    }

    /// Gradient buffer of input i, or nullptr when it does not need one.
    Tensor<T>* input_grad(std::size_t i)
    {
        auto& in = inputs[i];
        return in && in->requires_grad ? &in->grad_buffer() : nullptr;
    }

    const Tensor<T>& input_value(std::size_t i) const { return inputs[i]->value; }
};

/// Shared handle to a graph node. Copies alias the same node.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false, std::string name = {});
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
    bool has_grad() const { return node_->grad.shape() == node_->value.shape(); }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t dim(int i) const { return node_->value.dim(i); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& name() const { return node_->name; }
    void zero_grad();

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& shared() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

using VarF = Var<float>;
using VarD = Var<double>;

/// Disables graph recording on the current thread while alive.
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

/// Wraps an op result. Records `backward` and the inputs only when recording
/// is enabled and at least one input requires a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward);

/// Reverse-mode sweep from a scalar (single-element) root.
template <typename T>
void backward(const Var<T>& root);

extern template class Var<float>;
extern template class Var<double>;

} // namespace wmu
