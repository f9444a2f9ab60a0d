#pragma once

#include "onrw/archive.hpp"
#include "onrw/autograd.hpp"
#include "onrw/rng.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace onrw::nn {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

/// Named, ordered collection of trainable tensors.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor init);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }

    void zero_grad();
    std::size_t scalar_count() const;
    std::uint64_t checksum() const;

    void save_into(Archive& a, const std::string& prefix) const;
    /// Every registered parameter must be present with a matching shape.
    void load_from(const Archive& a, const std::string& prefix);

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// A ParameterStore bound into one Graph. Frozen bindings are constants.
class Bound {
public:
    Bound(ag::Graph& g, ParameterStore& store, bool trainable);

    ag::Var operator[](const std::string& name) const;
    ag::Graph& graph() const { return *graph_; }
    bool trainable() const { return trainable_; }
    /// Adds the graph's gradients into the store's grad tensors.
    void collect_grads() const;

private:
    ag::Graph* graph_;
    ParameterStore* store_;
    bool trainable_;
    std::unordered_map<std::string, ag::Var> vars_;
};

Tensor he_normal(Rng& rng, Shape shape, int fan_in, float gain = 1.0f);

/// Adam with decoupled weight decay.
class AdamW {
public:
    struct Options {
        float lr = 1e-3f;
        float beta1 = 0.9f;
        float beta2 = 0.999f;
        float eps = 1e-8f;
        float weight_decay = 0.0f;
    };

    explicit AdamW(Options opt) : opt_(opt) {}

    void step(ParameterStore& store);
    void step(Tensor& value, const Tensor& grad);
    void set_lr(float lr) { opt_.lr = lr; }
    const Options& options() const { return opt_; }

private:
    void update(std::size_t slot, Tensor& value, const Tensor& grad, float bc1, float bc2);

    Options opt_;
    std::vector<Tensor> m_, v_;
    long step_ = 0;
};

}  // namespace onrw::nn
