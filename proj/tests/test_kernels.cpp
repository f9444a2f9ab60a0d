#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "onrw/kernels.hpp"
#include "onrw/rng.hpp"

#include <cmath>
#include <vector>

using namespace onrw;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

float max_diff(const std::vector<float>& a, const std::vector<float>& b)
{
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("gemm matches the reference for every transpose combination")
{
    const int m = 7, n = 11, k = 13;
    auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            auto c1 = random_vec(m * n, 3), c2 = c1;
            kernels::gemm(ta, tb, m, n, k, 0.5f, a.data(), b.data(), 1.0f, c1.data());
            kernels::reference::gemm(ta, tb, m, n, k, 0.5f, a.data(), b.data(), 1.0f, c2.data());
            CHECK(max_diff(c1, c2) < 1e-4f);
        }
}

TEST_CASE("conv2d forward and backward match the direct reference")
{
    struct Case {
        int batch, in_ch, h, w, out_ch, kernel, stride, pad;
    };
    for (const Case& c : {Case{2, 3, 9, 7, 4, 3, 1, 1}, Case{3, 5, 8, 8, 6, 3, 2, 1}, Case{2, 4, 5, 5, 3, 1, 1, 0}}) {
        kernels::ConvShape s{c.batch, c.in_ch, c.h, c.w, c.out_ch, c.kernel, c.stride, c.pad};
        const std::size_t in_n = static_cast<std::size_t>(c.batch) * c.in_ch * c.h * c.w;
        const std::size_t out_n = static_cast<std::size_t>(c.batch) * c.out_ch * s.out_h() * s.out_w();
        const std::size_t w_n = static_cast<std::size_t>(c.out_ch) * c.in_ch * c.kernel * c.kernel;
        auto in = random_vec(in_n, 10), w = random_vec(w_n, 11), bias = random_vec(c.out_ch, 12);
        std::vector<float> o1(out_n), o2(out_n);
        kernels::conv2d_forward(s, in.data(), w.data(), bias.data(), o1.data());
        kernels::reference::conv2d_forward(s, in.data(), w.data(), bias.data(), o2.data());
        CHECK(max_diff(o1, o2) < 1e-4f);

        auto gout = random_vec(out_n, 13);
        std::vector<float> gi1(in_n, 0.5f), gi2(in_n, 0.5f);
        kernels::conv2d_backward_input(s, gout.data(), w.data(), gi1.data());
        kernels::reference::conv2d_backward_input(s, gout.data(), w.data(), gi2.data());
        CHECK(max_diff(gi1, gi2) < 1e-4f);

        std::vector<float> gw1(w_n, 0.25f), gw2(w_n, 0.25f), gb1(c.out_ch), gb2(c.out_ch);
        kernels::conv2d_backward_weight(s, in.data(), gout.data(), gw1.data(), gb1.data());
        kernels::reference::conv2d_backward_weight(s, in.data(), gout.data(), gw2.data(), gb2.data());
        CHECK(max_diff(gw1, gw2) < 1e-3f);
        CHECK(max_diff(gb1, gb2) < 1e-3f);
    }
}

TEST_CASE("group norm matches the reference")
{
    const int b = 2, c = 8, sp = 10, groups = 4;
    auto x = random_vec(b * c * sp, 20), gamma = random_vec(c, 21), beta = random_vec(c, 22), gy = random_vec(b * c * sp, 23);
    std::vector<float> y1(x.size()), y2(x.size()), m1(b * groups), m2(b * groups), r1(b * groups), r2(b * groups);
    kernels::group_norm_forward(b, c, sp, groups, 1e-5f, x.data(), gamma.data(), beta.data(), y1.data(), m1.data(), r1.data());
    kernels::reference::group_norm_forward(b, c, sp, groups, 1e-5f, x.data(), gamma.data(), beta.data(), y2.data(), m2.data(), r2.data());
    CHECK(max_diff(y1, y2) < 1e-4f);

    std::vector<float> gx1(x.size()), gx2(x.size()), gg1(c), gg2(c), gb1(c), gb2(c);
    kernels::group_norm_backward(b, c, sp, groups, x.data(), gamma.data(), m1.data(), r1.data(), gy.data(), gx1.data(), gg1.data(), gb1.data());
    kernels::reference::group_norm_backward(b, c, sp, groups, x.data(), gamma.data(), m2.data(), r2.data(), gy.data(), gx2.data(), gg2.data(), gb2.data());
    CHECK(max_diff(gx1, gx2) < 1e-4f);
    CHECK(max_diff(gg1, gg2) < 1e-3f);
    CHECK(max_diff(gb1, gb2) < 1e-3f);
}

TEST_CASE("softmax rows sum to one and the backward matches the full Jacobian")
{
    const std::size_t rows = 5;
    const int cols = 9;
    auto x = random_vec(rows * cols, 30), gy = random_vec(rows * cols, 31);
    for (auto& v : x) v *= 4.0f;
    std::vector<float> y1(x.size()), y2(x.size());
    kernels::softmax_rows(x.data(), y1.data(), rows, cols);
    kernels::reference::softmax_rows(x.data(), y2.data(), rows, cols);
    CHECK(max_diff(y1, y2) < 1e-6f);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += y1[r * cols + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
    std::vector<float> g1(x.size()), g2(x.size());
    kernels::softmax_rows_backward(y1.data(), gy.data(), g1.data(), rows, cols);
    kernels::reference::softmax_rows_backward(y1.data(), gy.data(), g2.data(), rows, cols);
    CHECK(max_diff(g1, g2) < 1e-5f);
}

TEST_CASE("kernel results do not depend on the thread count")
{
    kernels::ConvShape s{4, 6, 8, 8, 5, 3, 1, 1};
    const std::size_t in_n = 4 * 6 * 64, out_n = 4 * 5 * 64, w_n = 5 * 6 * 9;
    auto in = random_vec(in_n, 40), w = random_vec(w_n, 41);
    std::vector<float> o1(out_n), o2(out_n);
    const int prev = kernels::max_threads();
    kernels::set_threads(1);
    kernels::conv2d_forward(s, in.data(), w.data(), nullptr, o1.data());
    kernels::set_threads(4);
    kernels::conv2d_forward(s, in.data(), w.data(), nullptr, o2.data());
    kernels::set_threads(prev);
    CHECK(o1 == o2);
}
