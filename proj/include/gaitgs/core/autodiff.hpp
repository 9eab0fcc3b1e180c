#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "gaitgs/core/tensor.hpp"

namespace gaitgs::ad {

template <typename T>
class Tape;

/// One recorded value in a forward pass. Gradients are allocated lazily:
/// a node whose grad tensor is still empty received no upstream signal.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    std::int64_t order = -1;
    std::function<void(Node<T>&)> backward;

    Tensor<T>& ensure_grad() {
        if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
        return grad;
    }
};

/// Records one forward pass; replaying nodes in reverse creation order is a
/// valid topological order because ops only consume already-recorded nodes.
template <typename T>
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Node<T>* leaf(Tensor<T> value, bool needs_grad) {
        auto node = std::make_unique<Node<T>>();
        node->value = std::move(value);
        node->needs_grad = needs_grad && grad_enabled_;
        return push(std::move(node));
    }

    Node<T>* constant(Tensor<T> value) { return leaf(std::move(value), false); }

    /// Leaf tied to external parameter storage; repeated calls with the same
    /// pointer return the same node so shared weights accumulate gradient.
    Node<T>* leaf_for(const Tensor<T>* storage, bool needs_grad = true) {
        auto it = bound_.find(storage);
        if (it != bound_.end()) return it->second;
        Node<T>* n = leaf(*storage, needs_grad);
        bound_.emplace(storage, n);
        return n;
    }

    Node<T>* record(Tensor<T> value, std::vector<Node<T>*> parents,
                    std::function<void(Node<T>&)> backward_fn) {
        auto node = std::make_unique<Node<T>>();
        node->value = std::move(value);
        if (grad_enabled_) {
            for (Node<T>* p : parents)
                if (p && p->needs_grad) node->needs_grad = true;
            if (node->needs_grad) node->backward = std::move(backward_fn);
        }
        return push(std::move(node));
    }

    /// Reverse sweep from a scalar root.
    void backward(Node<T>* root) {
        if (!grad_enabled_) throw std::logic_error("Tape::backward with gradients disabled");
        if (root->value.numel() != 1) throw std::logic_error("Tape::backward root must be scalar");
        root->ensure_grad()[0] = T(1);
        for (std::int64_t i = root->order; i >= 0; --i) {
            Node<T>& n = *nodes_[static_cast<std::size_t>(i)];
            if (n.backward && !n.grad.empty()) n.backward(n);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    Node<T>* push(std::unique_ptr<Node<T>> node) {
        node->order = static_cast<std::int64_t>(nodes_.size());
        nodes_.push_back(std::move(node));
        return nodes_.back().get();
    }

    std::vector<std::unique_ptr<Node<T>>> nodes_;
    std::unordered_map<const Tensor<T>*, Node<T>*> bound_;
    bool grad_enabled_;
};

}  // namespace gaitgs::ad
