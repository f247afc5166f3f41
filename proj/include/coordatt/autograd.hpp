#pragma once

#include "coordatt/tensor.hpp"

#include <deque>
#include <functional>
#include <initializer_list>

namespace coordatt {

using NodeId = int;

struct Tape;

// One recorded value. Appended in forward order, so node ids are already a
// topological order; backward walks ids in reverse and visits each node once.
struct TapeNode {
    Tensor value;
    std::vector<double> grad;                // allocated lazily during backward
    std::function<void(Tape&)> backprop;     // null for leaves
    Tensor* sink = nullptr;                  // master parameter that receives grad
    bool requires_grad = false;
};

// Nodes live in a deque so references returned by val()/grad() stay valid
// while further nodes are emitted.
struct Tape {
    std::deque<TapeNode> nodes;
    bool consumed = false;

    // Plain input value. requires_grad=true keeps its gradient readable via
    // grad_tensor after backward.
    NodeId leaf(Tensor v, bool requires_grad = false);

    // Leaf bound to a long-lived parameter tensor; backward accumulates into
    // master.grad (creating it if absent).
    NodeId param(Tensor& master);

    const Tensor& val(NodeId id) const { return nodes[static_cast<std::size_t>(id)].value; }
    bool needs_grad(NodeId id) const { return nodes[static_cast<std::size_t>(id)].requires_grad; }

    // Gradient buffer of a node, zero-initialized on first touch.
    std::vector<double>& grad(NodeId id);
    Tensor grad_tensor(NodeId id) const;

    NodeId emit(Tensor value, std::initializer_list<NodeId> parents,
                std::function<void(Tape&)> backprop);

    // Reverse-mode sweep from a scalar root. A tape can be consumed once;
    // a second call or a non-scalar root is an error.
    void backward(NodeId root);
};

} // namespace coordatt
