#include "dpig/tape.hpp"

#include <string>

namespace dpig {

ValueId Tape::leaf(Tensor& t) {
    Node n;
    n.ext = &t;
    n.needs_grad = t.requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
}

ValueId Tape::constant(Tensor t) {
    Node n;
    n.val = std::move(t);
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
}

const Tensor& Tape::value(ValueId id) const {
    const Node& n = node(id);
    return n.ext ? *n.ext : n.val;
}

std::vector<double>& Tape::grad_buf(ValueId id) {
    Node& n = node(id);
    const size_t want = value(id).data.size();
    if (n.grad.size() != want) n.grad.assign(want, 0.0);
    return n.grad;
}

bool Tape::grad_allocated(ValueId id) const { return !node(id).grad.empty(); }

bool Tape::wants_grad(ValueId id) const { return node(id).needs_grad; }

ValueId Tape::add_node(Tensor out, const std::vector<ValueId>& parents, BackFn back) {
    Node n;
    n.val = std::move(out);
    for (ValueId p : parents) {
        if (node(p).needs_grad) {
            n.needs_grad = true;
            break;
        }
    }
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
}

void Tape::backward(ValueId output) {
    if (value(output).numel() != 1) {
        throw ShapeError("backward requires a scalar output, got shape " +
                         shape_str(value(output).shape));
    }
    backward_from({output}, {{1.0}});
}

void Tape::backward_from(const std::vector<ValueId>& outputs,
                         const std::vector<std::vector<double>>& seeds) {
    if (consumed_) throw Error("backward called twice on a consumed tape");
    consumed_ = true;
    if (outputs.size() != seeds.size()) throw Error("backward_from: outputs/seeds mismatch");

    for (size_t i = 0; i < outputs.size(); ++i) {
        const Tensor& v = value(outputs[i]);
        if (seeds[i].size() != v.data.size()) {
            throw ShapeError("backward seed " + std::to_string(i) + " has " +
                             std::to_string(seeds[i].size()) + " elements, node has " +
                             std::to_string(v.data.size()));
        }
        std::vector<double>& g = grad_buf(outputs[i]);
        for (size_t j = 0; j < g.size(); ++j) g[j] += seeds[i][j];
    }

    for (int64_t id = static_cast<int64_t>(nodes_.size()) - 1; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || n.grad.empty() || !n.back) continue;
        n.back(*this, n.grad);
    }

    // every requires_grad leaf on this tape ends up with a grad buffer,
    // zero where the output did not reach it
    for (Node& n : nodes_) {
        if (!n.ext || !n.ext->requires_grad) continue;
        n.ext->ensure_grad();
        if (n.grad.empty()) continue;
        for (size_t j = 0; j < n.grad.size(); ++j) n.ext->grad[j] += n.grad[j];
        check_finite(n.ext->grad, "leaf gradient");
    }
}

std::vector<const Tensor*> Tape::external_leaves() const {
    std::vector<const Tensor*> out;
    for (const Node& n : nodes_) {
        if (n.ext) out.push_back(n.ext);
    }
    return out;
}

}  // namespace dpig
