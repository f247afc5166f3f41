#include "coordatt/autograd.hpp"

#include <stdexcept>

namespace coordatt {

NodeId Tape::leaf(Tensor v, bool requires_grad) {
    TapeNode n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    nodes.push_back(std::move(n));
    return static_cast<NodeId>(nodes.size()) - 1;
}

NodeId Tape::param(Tensor& master) {
    TapeNode n;
    n.value = master;   // copy; master stays untouched until grads are deposited
    n.requires_grad = true;
    n.sink = &master;
    nodes.push_back(std::move(n));
    return static_cast<NodeId>(nodes.size()) - 1;
}

std::vector<double>& Tape::grad(NodeId id) {
    auto& n = nodes[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(n.value.data.size(), 0.0);
    return n.grad;
}

Tensor Tape::grad_tensor(NodeId id) const {
    const auto& n = nodes[static_cast<std::size_t>(id)];
    Tensor g(n.value.shape);
    if (!n.grad.empty()) g.data = n.grad;
    return g;
}

NodeId Tape::emit(Tensor value, std::initializer_list<NodeId> parents,
                  std::function<void(Tape&)> backprop) {
    TapeNode n;
    n.value = std::move(value);
    n.backprop = std::move(backprop);
    for (NodeId p : parents)
        if (nodes[static_cast<std::size_t>(p)].requires_grad) n.requires_grad = true;
    nodes.push_back(std::move(n));
    return static_cast<NodeId>(nodes.size()) - 1;
}

void Tape::backward(NodeId root) {
    if (consumed) throw std::runtime_error("backward: tape already consumed");
    if (root < 0 || root >= static_cast<NodeId>(nodes.size()))
        throw std::runtime_error("backward: root id out of range");
    if (nodes[static_cast<std::size_t>(root)].value.numel() != 1)
        throw std::runtime_error("backward: root must be scalar, got shape " +
                                 shape_to_string(nodes[static_cast<std::size_t>(root)].value.shape));
    consumed = true;
    grad(root)[0] = 1.0;
    for (NodeId id = root; id >= 0; --id) {
        auto& n = nodes[static_cast<std::size_t>(id)];
        if (!n.grad.empty() && n.backprop) n.backprop(*this);
    }
    for (auto& n : nodes) {
        if (!n.sink || n.grad.empty()) continue;
        if (!n.sink->grad) n.sink->grad = std::vector<double>(n.value.data.size(), 0.0);
        auto& g = *n.sink->grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
}

} // namespace coordatt
