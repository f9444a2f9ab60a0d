#include "onrw/autograd.hpp"

#include <stdexcept>

namespace onrw::ag {

Var Graph::constant(Tensor value)
{
    nodes_.push_back(Node{std::move(value), {}, {}, false});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::leaf(Tensor value)
{
    nodes_.push_back(Node{std::move(value), {}, {}, true});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, Backward fn)
{
    bool any = false;
    for (const Var& v : inputs) {
        if (&v.graph() != this) throw std::logic_error("autograd: mixing vars from different graphs");
        any = any || v.requires_grad();
    }
    nodes_.push_back(Node{std::move(value), {}, any ? std::move(fn) : Backward{}, any});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, Backward fn)
{
    bool any = false;
    for (const Var& v : inputs) {
        if (&v.graph() != this) throw std::logic_error("autograd: mixing vars from different graphs");
        any = any || v.requires_grad();
    }
    nodes_.push_back(Node{std::move(value), {}, any ? std::move(fn) : Backward{}, any});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor& Graph::grad_accumulator(int id)
{
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0f);
    return n.grad;
}

void Graph::backward(Var root)
{
    if (root.value().size() != 1) throw std::invalid_argument("backward: root must be a single element");
    backward(root, Tensor(root.shape(), 1.0f));
}

void Graph::backward(Var root, const Tensor& seed)
{
    if (&root.graph() != this) throw std::logic_error("backward: root belongs to another graph");
    if (!seed.same_shape(root.value())) throw std::invalid_argument("backward: seed shape mismatch");
    if (!root.requires_grad()) return;
    Tensor& g = grad_accumulator(root.id());
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    for (int id = root.id(); id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
        n.backward(*this, id);
    }
}

}  // namespace onrw::ag
