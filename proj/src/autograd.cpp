#include "wmu/autograd.hpp"

#include <unordered_set>

namespace wmu {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad, std::string name) : node_(std::make_shared<Node<T>>())
{
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->name = std::move(name);
}

template <typename T>
void Var<T>::zero_grad()
{
    if (has_grad()) {
        node_->grad.fill(T(0));
    }
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward)
{
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& in : inputs) {
            any = any || (in.defined() && in.requires_grad());
        }
        if (any) {
            node->requires_grad = true;
            node->inputs.reserve(inputs.size());
            for (auto& in : inputs) {
                node->inputs.push_back(in.shared());
            }
            node->backward = std::move(backward);
        }
    }
    return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& root)
{
    if (root.value().numel() != 1) {
        throw ConfigError("backward() needs a single-element root, got " + shape_str(root.shape()));
    }
    if (!root.requires_grad()) {
        return;
    }

    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child && child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && node->grad.shape() == node->value.shape()) {
            node->backward(*node);
        }
    }
}

template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>, std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

} // namespace wmu
