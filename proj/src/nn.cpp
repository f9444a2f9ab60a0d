#include "onrw/nn.hpp"

#include "onrw/hash.hpp"

#include <cmath>
#include <stdexcept>

namespace onrw::nn {

Tensor& ParameterStore::add(const std::string& name, Tensor init)
{
    if (has(name)) throw std::logic_error("parameter registered twice: " + name);
    index_[name] = params_.size();
    Tensor grad(init.shape(), 0.0f);
    params_.push_back(Parameter{name, std::move(init), std::move(grad)});
    return params_.back().value;
}

Parameter& ParameterStore::get(const std::string& name)
{
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const
{
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second];
}

void ParameterStore::zero_grad()
{
    for (auto& p : params_) p.grad.fill(0.0f);
}

std::size_t ParameterStore::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

std::uint64_t ParameterStore::checksum() const
{
    Fnv1a h;
    for (const auto& p : params_) {
        h.update(p.name);
        const std::uint64_t c = p.value.checksum();
        h.update(&c, sizeof c);
    }
    return h.digest();
}

void ParameterStore::save_into(Archive& a, const std::string& prefix) const
{
    for (const auto& p : params_) a.put(prefix + p.name, p.value);
}

void ParameterStore::load_from(const Archive& a, const std::string& prefix)
{
    for (auto& p : params_) {
        const Tensor& t = a.get(prefix + p.name);
        if (!t.same_shape(p.value))
            throw std::runtime_error("checkpoint shape mismatch for " + p.name + ": " + shape_str(t.shape()) +
                                     " vs " + shape_str(p.value.shape()));
        p.value = t;
    }
}

Bound::Bound(ag::Graph& g, ParameterStore& store, bool trainable)
    : graph_(&g), store_(&store), trainable_(trainable)
{
    for (auto& p : store.all()) vars_.emplace(p.name, trainable ? g.leaf(p.value) : g.constant(p.value));
}

ag::Var Bound::operator[](const std::string& name) const
{
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("unbound parameter: " + name);
    return it->second;
}

void Bound::collect_grads() const
{
    if (!trainable_) return;
    for (auto& p : store_->all()) {
        const Tensor& g = graph_->grad(vars_.at(p.name));
        if (g.empty()) continue;
        for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
    }
}

Tensor he_normal(Rng& rng, Shape shape, int fan_in, float gain)
{
    Tensor t = rng.normal_tensor(std::move(shape));
    const float s = gain * std::sqrt(2.0f / static_cast<float>(fan_in));
    for (auto& v : t.values()) v *= s;
    return t;
}

void AdamW::update(std::size_t slot, Tensor& value, const Tensor& grad, float bc1, float bc2)
{
    if (m_.size() <= slot) {
        m_.resize(slot + 1);
        v_.resize(slot + 1);
    }
    if (m_[slot].empty()) {
        m_[slot] = Tensor(value.shape(), 0.0f);
        v_[slot] = Tensor(value.shape(), 0.0f);
    }
    Tensor& m = m_[slot];
    Tensor& v = v_[slot];
    for (std::size_t i = 0; i < value.size(); ++i) {
        const float g = grad[i];
        m[i] = opt_.beta1 * m[i] + (1.0f - opt_.beta1) * g;
        v[i] = opt_.beta2 * v[i] + (1.0f - opt_.beta2) * g * g;
        const float mhat = m[i] / bc1;
        const float vhat = v[i] / bc2;
        value[i] -= opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * value[i]);
    }
}

void AdamW::step(ParameterStore& store)
{
    ++step_;
    const float bc1 = 1.0f - std::pow(opt_.beta1, static_cast<float>(step_));
    const float bc2 = 1.0f - std::pow(opt_.beta2, static_cast<float>(step_));
    auto& ps = store.all();
    for (std::size_t i = 0; i < ps.size(); ++i) update(i, ps[i].value, ps[i].grad, bc1, bc2);
}

void AdamW::step(Tensor& value, const Tensor& grad)
{
    if (!value.same_shape(grad)) throw std::invalid_argument("AdamW::step: gradient shape mismatch");
    ++step_;
    const float bc1 = 1.0f - std::pow(opt_.beta1, static_cast<float>(step_));
    const float bc2 = 1.0f - std::pow(opt_.beta2, static_cast<float>(step_));
    update(0, value, grad, bc1, bc2);
}

}  // namespace onrw::nn
