#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradcheck.hpp"
#include "onrw/attack.hpp"
#include "onrw/dataset.hpp"
#include "onrw/image.hpp"
#include "onrw/ops.hpp"

#include <cmath>

using namespace onrw;
using attack::AttackSpec;
using attack::Kind;

namespace {

double mean_abs01(const Tensor& a, const Tensor& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]) / 2.0;
    return s / a.size();
}

Tensor gray(float level01)
{
    return Tensor({1, 3, 16, 16}, level01 * 2.0f - 1.0f);
}

}  // namespace

TEST_CASE("identity-valued intensities leave the image unchanged")
{
    const data::Dataset ds = data::make_toy_dataset(2, 32, 5);
    const Tensor& img = ds.images[0];
    CHECK(attack::apply({Kind::identity, 1.0f, 0}, img) == img);
    CHECK(max_abs_diff(attack::apply({Kind::crop, 1.0f, 3}, img), img) < 1e-5f);
    CHECK(max_abs_diff(attack::apply({Kind::resize, 1.0f, 0}, img), img) < 1e-5f);
    CHECK(max_abs_diff(attack::apply({Kind::rotate, 0.0f, 0}, img), img) < 1e-5f);
    CHECK(max_abs_diff(attack::apply({Kind::brightness, 1.0f, 0}, img), img) < 1e-6f);
}

TEST_CASE("brightness multiplies intensity and clamps")
{
    const Tensor out = attack::apply({Kind::brightness, 1.5f, 0}, gray(0.4f));
    for (float v : out.values()) CHECK((v + 1.0f) / 2.0f == doctest::Approx(0.6f).epsilon(1e-5));
    const Tensor sat = attack::apply({Kind::brightness, 3.0f, 0}, gray(0.5f));
    for (float v : sat.values()) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("rotation by 90 degrees permutes pixels")
{
    Rng rng(3);
    Tensor img = rng.uniform_tensor({1, 3, 8, 8}, -1.0f, 1.0f);
    const Tensor r = attack::apply({Kind::rotate, 90.0f, 0}, img);
    // Either orientation is acceptable; the content must be a pure permutation.
    bool cw = true, ccw = true;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                cw &= std::fabs(r.at(0, c, y, x) - img.at(0, c, 7 - x, y)) < 1e-4f;
                ccw &= std::fabs(r.at(0, c, y, x) - img.at(0, c, x, 7 - y)) < 1e-4f;
            }
    CHECK((cw || ccw));
}

TEST_CASE("crop keeps the requested area and is reproducible from its seed")
{
    Rng rng(4);
    const Tensor img = rng.uniform_tensor({1, 3, 32, 32}, -1.0f, 1.0f);
    const Tensor a = attack::apply({Kind::crop, 0.25f, 9}, img), b = attack::apply({Kind::crop, 0.25f, 9}, img);
    CHECK(a == b);
    CHECK(a.shape() == img.shape());
    CHECK(attack::apply({Kind::crop, 0.25f, 10}, img) != a);
}

TEST_CASE("differentiable JPEG tracks libjpeg")
{
    const data::Dataset ds = data::make_toy_dataset(10, 32, 77);
    for (int q : {50, 80, 95}) {
        double d = 0.0;
        for (const auto& img : ds.images) d += mean_abs01(attack::apply({Kind::jpeg, static_cast<float>(q), 0}, img), image::jpeg_roundtrip(img, q));
        d /= ds.size();
        INFO("q=" << q << " mean |diff| " << d);
        CHECK(d <= 0.06);
    }
}

TEST_CASE("straight-through JPEG gradient matches the smooth surrogate's finite differences")
{
    const data::Dataset ds = data::make_toy_dataset(1, 16, 21);
    const Tensor w = Rng(22).normal_tensor({1, 3, 16, 16});
    for (float q : {50.0f, 80.0f}) {
        // Smooth surrogate: forward without rounding, so finite differences are meaningful.
        auto smooth = [&](ag::Graph&, ag::Var v) { return ag::sum(ag::mul_const(attack::differentiable_jpeg(v, q, {true, false}), w)); };
        const Tensor ste = test::analytic_grad(
            [&](ag::Graph&, ag::Var v) { return ag::sum(ag::mul_const(attack::differentiable_jpeg(v, q, {true, true}), w)); },
            ds.images[0]);
        const Tensor sur = test::analytic_grad(smooth, ds.images[0]);
        CHECK(max_abs_diff(ste, sur) < 1e-5f);
        const auto r = test::grad_check(smooth, ds.images[0], 60, 23, 1e-2f);
        INFO("q=" << q << " worst " << r.worst_rel);
        CHECK(r.passed >= 0.9 * r.checked);
    }
}

TEST_CASE("geometric and photometric attacks have correct gradients")
{
    const Tensor x = Rng(30).uniform_tensor({1, 3, 12, 12}, -0.8f, 0.8f);
    const Tensor w = Rng(31).normal_tensor({1, 3, 12, 12});
    for (AttackSpec s : {AttackSpec{Kind::crop, 0.5f, 2}, AttackSpec{Kind::resize, 0.6f, 0}, AttackSpec{Kind::rotate, 17.0f, 0},
                         AttackSpec{Kind::brightness, 1.2f, 0}}) {
        const auto r = test::grad_check([&](ag::Graph&, ag::Var v) { return ag::sum(ag::mul_const(attack::apply(s, v), w)); }, x, 40, 32);
        INFO(attack::kind_name(s.kind));
        CHECK(r.passed == r.checked);
    }
}

TEST_CASE("pool sampling is deterministic and validates its inputs")
{
    const auto pool = attack::AttackPool::defaults();
    CHECK(pool.specs.size() == 6);
    const AttackSpec a = attack::sample_spec(pool, 77), b = attack::sample_spec(pool, 77);
    CHECK(a.kind == b.kind);
    CHECK(a.intensity == b.intensity);
    int seen[6] = {};
    for (int i = 0; i < 600; ++i) {
        const AttackSpec s = attack::sample_spec(pool, i);
        ++seen[static_cast<int>(s.kind)];
        for (const auto& t : pool.specs)
            if (t.kind == s.kind) CHECK((s.intensity >= t.lo && s.intensity <= t.hi));
    }
    for (int c : seen) CHECK(c > 60);

    attack::AttackPool empty;
    CHECK_THROWS(empty.validate());
    CHECK_THROWS(AttackSpec{Kind::jpeg, 0.0f, 0}.validate());
    CHECK_THROWS(AttackSpec{Kind::crop, 1.5f, 0}.validate());
    CHECK(attack::parse_kind(attack::kind_name(Kind::rotate)) == Kind::rotate);
    CHECK_THROWS(attack::parse_kind("blur"));
    const auto round = attack::AttackPool::from_json(pool.to_json());
    CHECK(round.specs.size() == pool.specs.size());
}
