#pragma once

// Reverse-mode automatic differentiation on a linear tape.
//
// A Graph owns every intermediate value created while it is alive. Nodes are
// appended in evaluation order, so walking the tape backwards is a valid
// topological order. Build a fresh Graph per forward/backward pass.

#include "onrw/tensor.hpp"

#include <functional>
#include <initializer_list>
#include <vector>

namespace onrw::ag {

class Graph;

class Var {
public:
    Var() = default;

    Graph& graph() const { return *graph_; }
    int id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    int dim(int axis) const { return value().dim(axis); }
    int rank() const { return value().rank(); }
    bool requires_grad() const;

private:
    friend class Graph;
    Var(Graph* g, int id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    int id_ = -1;
};

class Graph {
public:
    using Backward = std::function<void(Graph&, int self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// A value that never receives a gradient.
    Var constant(Tensor value);
    /// A leaf whose gradient is collected by backward().
    Var leaf(Tensor value);
    /// Internal: record an op result. `fn` is kept only if some input needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn);
    Var record(Tensor value, const std::vector<Var>& inputs, Backward fn);

    /// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
    void backward(Var root);
    void backward(Var root, const Tensor& seed);

    const Tensor& value(int id) const { return nodes_[id].value; }
    bool needs_grad(int id) const { return nodes_[id].requires_grad; }
    /// Gradient of a node after backward(); an empty tensor if nothing flowed into it.
    const Tensor& grad(int id) const { return nodes_[id].grad; }
    const Tensor& grad(Var v) const { return grad(v.id()); }
    /// Zero-initialised on first access.
    Tensor& grad_accumulator(int id);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Backward backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline bool Var::requires_grad() const { return graph_->needs_grad(id_); }

}  // namespace onrw::ag
