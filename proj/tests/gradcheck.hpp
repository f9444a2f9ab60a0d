#pragma once

// Central finite-difference oracle for autograd tests. Independent of the
// backward implementations: it only ever calls forward.

#include "onrw/autograd.hpp"
#include "onrw/rng.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace onrw::test {

using ScalarFn = std::function<ag::Var(ag::Graph&, ag::Var)>;

struct GradCheck {
    int checked = 0;
    int passed = 0;
    double worst_rel = 0.0;
};

inline float eval_scalar(const ScalarFn& f, const Tensor& x)
{
    ag::Graph g;
    return f(g, g.constant(x)).value()[0];
}

inline Tensor analytic_grad(const ScalarFn& f, const Tensor& x)
{
    ag::Graph g;
    ag::Var v = g.leaf(x);
    ag::Var y = f(g, v);
    g.backward(y);
    Tensor gr = g.grad(v);
    if (gr.empty()) gr = Tensor(x.shape(), 0.0f);
    return gr;
}

/// Compares analytic and central-difference gradients at `probes` random coordinates
/// (or all coordinates when probes <= 0). A coordinate passes when
/// |a - n| <= rel_tol * max(|a|, |n|) + abs_tol, where abs_tol is widened by the float noise floor.
inline GradCheck grad_check(const ScalarFn& f, const Tensor& x, int probes, std::uint64_t seed, float h = 1e-2f,
                            double rel_tol = 1e-2, double abs_tol = 1e-4)
{
    const Tensor ga = analytic_grad(f, x);
    // float32 forward: cancellation noise grows with |f| / h.
    abs_tol += 4e-7 * std::fabs(eval_scalar(f, x)) / h;
    Rng rng(seed);
    std::vector<std::size_t> coords;
    if (probes <= 0 || static_cast<std::size_t>(probes) >= x.size()) {
        for (std::size_t i = 0; i < x.size(); ++i) coords.push_back(i);
    } else {
        for (int i = 0; i < probes; ++i) coords.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(x.size()) - 1)));
    }
    GradCheck out;
    for (std::size_t i : coords) {
        Tensor xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double num = (static_cast<double>(eval_scalar(f, xp)) - eval_scalar(f, xm)) / (2.0 * h);
        const double ana = ga[i];
        const double err = std::fabs(ana - num);
        const double scale = std::max(std::fabs(ana), std::fabs(num));
        ++out.checked;
        if (err <= rel_tol * scale + abs_tol) ++out.passed;
        if (scale > abs_tol) out.worst_rel = std::max(out.worst_rel, err / scale);
    }
    return out;
}

}  // namespace onrw::test
