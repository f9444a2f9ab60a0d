#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradcheck.hpp"
#include "onrw/ops.hpp"

#include <cmath>

using namespace onrw;
using namespace onrw::ag;
using onrw::test::grad_check;

namespace {

Tensor randn(Shape s, std::uint64_t seed, float scale = 1.0f)
{
    Rng rng(seed);
    Tensor t = rng.normal_tensor(std::move(s));
    for (auto& v : t.values()) v *= scale;
    return t;
}

// Random linear probe so every output element carries a distinct weight.
Var probe(Var y, std::uint64_t seed)
{
    Tensor w = randn(y.shape(), seed);
    return sum(mul_const(y, w));
}

void expect_grad(const onrw::test::ScalarFn& f, const Tensor& x, int probes = 0, float h = 1e-2f)
{
    auto r = grad_check(f, x, probes, 99, h);
    INFO("worst relative error " << r.worst_rel);
    CHECK(r.passed == r.checked);
}

}  // namespace

TEST_CASE("elementwise ops")
{
    Tensor x = randn({2, 3, 4, 4}, 1);
    expect_grad([](Graph&, Var v) { return probe(sigmoid(v), 2); }, x);
    expect_grad([](Graph&, Var v) { return probe(silu(v), 3); }, x);
    expect_grad([](Graph&, Var v) { return probe(tanh(v), 4); }, x);
    expect_grad([](Graph&, Var v) { return probe(square(v), 5); }, x);
    Tensor off_kink = x;
    for (auto& v : off_kink.values()) v += v >= 0.0f ? 0.05f : -0.05f;
    expect_grad([](Graph&, Var v) { return probe(leaky_relu(v, 0.2f), 6); }, off_kink);
    expect_grad([](Graph& g, Var v) { return probe(mul(v, add(v, g.constant(randn(v.shape(), 7)))), 8); }, x);
    expect_grad([](Graph&, Var v) { return l2_norm(scale(v, 3.0f)); }, x);
    expect_grad([](Graph&, Var v) { return mean(sum_squares(v)); }, x);
}

TEST_CASE("layout ops")
{
    Tensor x = randn({2, 3, 8, 8}, 10);
    expect_grad([](Graph&, Var v) { return probe(patchify(v, 4), 11); }, x, 40);
    expect_grad([](Graph&, Var v) { return probe(unpatchify(patchify(v, 2), 2), 12); }, x, 40);
    expect_grad([](Graph&, Var v) { return probe(from_tokens(to_tokens(v), 8, 8), 13); }, x, 40);
    expect_grad([](Graph&, Var v) { return probe(upsample_nearest(v, 2), 14); }, x, 40);
    expect_grad([](Graph&, Var v) { return probe(avg_pool(v, 2), 15); }, x, 40);
    expect_grad([](Graph&, Var v) { return probe(global_avg_pool(v), 16); }, x, 40);
    expect_grad([](Graph&, Var v) { return probe(concat_channels(v, scale(v, 2.0f)), 17); }, x, 40);
    expect_grad([](Graph&, Var v) { return probe(concat_batch({slice_batch(v, 1, 1), slice_batch(v, 0, 2)}), 18); }, x, 40);
    expect_grad([](Graph&, Var v) { return probe(repeat_batch(slice_batch(v, 0, 1), 3), 19); }, x, 40);
    expect_grad([](Graph&, Var v) { return probe(mul_spatial_const(v, randn({8, 8}, 20)), 21); }, x, 40);
    expect_grad([](Graph&, Var v) { return probe(mul_channel_const(v, randn({3}, 22)), 23); }, x, 40);

    expect_grad([](Graph&, Var v) { return probe(concat_axis({slice_axis(v, 2, 1, 3), v, slice_axis(v, 2, 0, 1)}, 2), 28); }, x, 40);
    expect_grad([](Graph&, Var v) { return probe(slice_axis(v, -1, 2, 5), 29); }, x, 40);

    Tensor x2 = randn({2, 5}, 24);
    expect_grad([](Graph&, Var v) { return probe(expand_spatial(v, 3, 3), 25); }, x2);
    Tensor img = randn({2, 5, 3, 3}, 26);
    expect_grad([&img](Graph& g, Var v) { return probe(add_channel(g.constant(img), v), 27); }, x2);
}

TEST_CASE("patchify round trip is exact")
{
    Graph g;
    Tensor x = randn({1, 3, 8, 8}, 30);
    Var v = g.constant(x);
    CHECK(unpatchify(patchify(v, 4), 4).value() == x);
    CHECK(from_tokens(to_tokens(v), 8, 8).value() == x);
}

TEST_CASE("conv2d, linear and group norm gradients")
{
    Tensor x = randn({2, 3, 6, 6}, 40);
    Tensor w = randn({4, 3, 3, 3}, 41, 0.3f);
    Tensor b = randn({4}, 42);
    expect_grad([&](Graph& g, Var v) { return probe(conv2d(v, g.constant(w), g.constant(b), 1, 1), 43); }, x, 40);
    expect_grad([&](Graph& g, Var v) { return probe(conv2d(g.constant(x), v, g.constant(b), 2, 1), 44); }, w, 40);
    expect_grad([&](Graph& g, Var v) { return probe(conv2d(g.constant(x), g.constant(w), v, 1, 1), 45); }, b);

    Tensor lx = randn({2, 5, 6}, 46), lw = randn({3, 6}, 47), lb = randn({3}, 48);
    expect_grad([&](Graph& g, Var v) { return probe(linear(v, g.constant(lw), g.constant(lb)), 49); }, lx);
    expect_grad([&](Graph& g, Var v) { return probe(linear(g.constant(lx), v, g.constant(lb)), 50); }, lw);
    expect_grad([&](Graph& g, Var v) { return probe(linear(g.constant(lx), g.constant(lw), v), 51); }, lb);

    Tensor gx = randn({2, 4, 3, 3}, 52), gamma = randn({4}, 53), beta = randn({4}, 54);
    expect_grad([&](Graph& g, Var v) { return probe(group_norm(v, g.constant(gamma), g.constant(beta), 2), 55); }, gx);
    expect_grad([&](Graph& g, Var v) { return probe(group_norm(g.constant(gx), v, g.constant(beta), 2), 56); }, gamma);
    expect_grad([&](Graph& g, Var v) { return probe(group_norm(g.constant(gx), g.constant(gamma), v, 2), 57); }, beta);
}

TEST_CASE("bmm gradients for all transpose flags and softmax")
{
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            Tensor a = randn(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, 60);
            Tensor b = randn(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, 61);
            expect_grad([&](Graph& g, Var v) { return probe(bmm(v, g.constant(b), ta, tb), 62); }, a);
            expect_grad([&](Graph& g, Var v) { return probe(bmm(g.constant(a), v, ta, tb), 63); }, b);
        }
    Tensor s = randn({3, 4, 6}, 64);
    expect_grad([](Graph&, Var v) { return probe(softmax_lastdim(v), 65); }, s);
}

TEST_CASE("resample, colour affine and block DCT")
{
    auto map = std::make_shared<SparseMap>();
    map->in_h = map->in_w = 4;
    map->out_h = map->out_w = 2;
    map->row_begin = {0, 2, 3, 3, 5};
    map->index = {0, 5, 7, 10, 15};
    map->weight = {0.25f, 0.75f, 1.0f, 0.5f, 0.5f};
    Tensor x = randn({1, 2, 4, 4}, 70);
    expect_grad([map](Graph&, Var v) { return probe(resample(v, map), 71); }, x);

    Tensor c = randn({2, 3, 4, 4}, 72);
    const std::array<float, 9> m{0.3f, 0.6f, 0.1f, -0.2f, -0.3f, 0.5f, 0.5f, -0.4f, -0.1f};
    expect_grad([m](Graph&, Var v) { return probe(color_affine(v, m, {1.0f, 2.0f, 3.0f}), 73); }, c);

    Tensor d = randn({1, 2, 8, 16}, 74);
    expect_grad([](Graph&, Var v) { return probe(block_dct8(v, false), 75); }, d, 50);
    expect_grad([](Graph&, Var v) { return probe(block_dct8(v, true), 76); }, d, 50);

    Graph g;
    Var dv = g.constant(d);
    CHECK(max_abs_diff(block_dct8(block_dct8(dv, false), true).value(), d) < 1e-5f);
}

TEST_CASE("straight-through rounding passes gradients unchanged")
{
    Graph g;
    Tensor x({4}, std::vector<float>{0.2f, 1.6f, -2.4f, 3.5f});
    Var v = g.leaf(x);
    Var y = sum(scale(round_ste(v), 2.0f));
    CHECK(y.value()[0] == doctest::Approx(2.0f * (0.0f + 2.0f - 2.0f + 4.0f)));
    g.backward(y);
    for (float gv : g.grad(v).values()) CHECK(gv == 2.0f);
}

TEST_CASE("constants never receive gradients and frozen ops skip closures")
{
    Graph g;
    Var c = g.constant(randn({3}, 80));
    Var y = sum(square(c));
    CHECK_FALSE(y.requires_grad());
    g.backward(y);
    CHECK(g.grad(c).empty());
}
