#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dpig/tensor.hpp"

namespace dpig {

using ValueId = int32_t;

// Reverse-mode tape. Nodes are appended in forward order; backward walks
// them strictly in reverse creation order, which pins the floating-point
// accumulation order and keeps runs bitwise reproducible.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf referring to an external tensor. If the tensor requires grad,
    // backward adds this tape's contribution into tensor.grad.
    ValueId leaf(Tensor& t);

    // Tape-owned input that never receives a gradient.
    ValueId constant(Tensor t);

    const Tensor& value(ValueId id) const;

    // Gradient buffer of a node, allocated to zeros on first access.
    std::vector<double>& grad_buf(ValueId id);
    bool grad_allocated(ValueId id) const;
    bool wants_grad(ValueId id) const;

    // backward from a scalar output, seeding d(out)/d(out) = 1
    void backward(ValueId output);

    // backward from several outputs with explicit seed gradients; used for
    // split execution where part of the graph lives on the other side of a
    // wire. Seeds must match each output's element count.
    void backward_from(const std::vector<ValueId>& outputs,
                       const std::vector<std::vector<double>>& seeds);

    bool consumed() const { return consumed_; }
    std::vector<const Tensor*> external_leaves() const;
    size_t size() const { return nodes_.size(); }

    // op construction; back receives (tape, grad of this node)
    using BackFn = std::function<void(Tape&, const std::vector<double>&)>;
    ValueId add_node(Tensor out, const std::vector<ValueId>& parents, BackFn back);

private:
    struct Node {
        Tensor val;              // owned value (unused for external leaves)
        Tensor* ext = nullptr;   // external tensor for leaves
        bool needs_grad = false;
        std::vector<double> grad;
        BackFn back;             // empty for leaves and constants
    };

    Node& node(ValueId id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(ValueId id) const { return nodes_[static_cast<size_t>(id)]; }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

}  // namespace dpig
