// Production kernels against the serial reference loops, on the shapes the
// toy model actually runs. The Threads(n) variants only differ from each
// other on multi-core machines.

#include "onrw/kernels.hpp"
#include "onrw/rng.hpp"

#include <benchmark/benchmark.h>

#include <string>
#include <utility>
#include <vector>

using namespace onrw;
namespace k = onrw::kernels;

namespace {

std::vector<float> random_buffer(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

// Diffusion UNet block at the patch grid: 32 -> 32 channels on 8x8, batch 2 (guidance pair).
k::ConvShape block_shape()
{
    k::ConvShape s;
    s.batch = 2;
    s.in_ch = 32;
    s.out_ch = 32;
    s.height = s.width = 8;
    return s;
}

// Decoder stem: 3 -> 32 channels on the full 32x32 image, batch 16.
k::ConvShape stem_shape()
{
    k::ConvShape s;
    s.batch = 16;
    s.in_ch = 3;
    s.out_ch = 32;
    s.height = s.width = 32;
    return s;
}

template <bool Reference>
void conv_forward(benchmark::State& st, k::ConvShape s)
{
    const auto in = random_buffer(std::size_t(s.batch) * s.in_ch * s.height * s.width, 1);
    const auto w = random_buffer(std::size_t(s.out_ch) * s.in_ch * s.kernel * s.kernel, 2);
    const auto b = random_buffer(s.out_ch, 3);
    std::vector<float> out(std::size_t(s.batch) * s.out_ch * s.out_h() * s.out_w());
    k::set_threads(static_cast<int>(st.range(0)));
    for (auto _ : st) {
        if constexpr (Reference) k::reference::conv2d_forward(s, in.data(), w.data(), b.data(), out.data());
        else k::conv2d_forward(s, in.data(), w.data(), b.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
    st.SetItemsProcessed(st.iterations() * std::int64_t(out.size()));
}

template <bool Reference>
void conv_backward(benchmark::State& st, k::ConvShape s)
{
    const auto in = random_buffer(std::size_t(s.batch) * s.in_ch * s.height * s.width, 4);
    const auto w = random_buffer(std::size_t(s.out_ch) * s.in_ch * s.kernel * s.kernel, 5);
    const auto gy = random_buffer(std::size_t(s.batch) * s.out_ch * s.out_h() * s.out_w(), 6);
    std::vector<float> gx(in.size()), gw(w.size()), gb(s.out_ch);
    k::set_threads(static_cast<int>(st.range(0)));
    for (auto _ : st) {
        if constexpr (Reference) {
            k::reference::conv2d_backward_input(s, gy.data(), w.data(), gx.data());
            k::reference::conv2d_backward_weight(s, in.data(), gy.data(), gw.data(), gb.data());
        } else {
            k::conv2d_backward_input(s, gy.data(), w.data(), gx.data());
            k::conv2d_backward_weight(s, in.data(), gy.data(), gw.data(), gb.data());
        }
        benchmark::DoNotOptimize(gx.data());
        benchmark::DoNotOptimize(gw.data());
    }
}

// Attention scores: 64 queries against 64 keys, head dim 32.
template <bool Reference>
void gemm_scores(benchmark::State& st)
{
    const int m = 64, n = 64, kk = 32;
    const auto a = random_buffer(std::size_t(m) * kk, 7);
    const auto b = random_buffer(std::size_t(n) * kk, 8);
    std::vector<float> c(std::size_t(m) * n);
    k::set_threads(static_cast<int>(st.range(0)));
    for (auto _ : st) {
        if constexpr (Reference) k::reference::gemm(false, true, m, n, kk, 1.0f, a.data(), b.data(), 0.0f, c.data());
        else k::gemm(false, true, m, n, kk, 1.0f, a.data(), b.data(), 0.0f, c.data());
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(st.iterations() * std::int64_t(m) * n * kk);
}

template <bool Reference>
void group_norm(benchmark::State& st)
{
    const int batch = 2, ch = 64, spatial = 16, groups = 8;
    const auto x = random_buffer(std::size_t(batch) * ch * spatial, 9);
    const auto gamma = random_buffer(ch, 10), beta = random_buffer(ch, 11);
    std::vector<float> y(x.size()), mean(batch * groups), rstd(batch * groups);
    std::vector<float> gx(x.size()), gg(ch), gbeta(ch);
    k::set_threads(static_cast<int>(st.range(0)));
    for (auto _ : st) {
        if constexpr (Reference) {
            k::reference::group_norm_forward(batch, ch, spatial, groups, 1e-5f, x.data(), gamma.data(), beta.data(), y.data(),
                                             mean.data(), rstd.data());
            k::reference::group_norm_backward(batch, ch, spatial, groups, x.data(), gamma.data(), mean.data(), rstd.data(),
                                              y.data(), gx.data(), gg.data(), gbeta.data());
        } else {
            k::group_norm_forward(batch, ch, spatial, groups, 1e-5f, x.data(), gamma.data(), beta.data(), y.data(), mean.data(),
                                  rstd.data());
            k::group_norm_backward(batch, ch, spatial, groups, x.data(), gamma.data(), mean.data(), rstd.data(), y.data(),
                                   gx.data(), gg.data(), gbeta.data());
        }
        benchmark::DoNotOptimize(gx.data());
    }
}

template <bool Reference>
void softmax(benchmark::State& st)
{
    const std::size_t rows = 2 * 64;
    const int cols = 65;
    const auto x = random_buffer(rows * cols, 12);
    std::vector<float> y(x.size()), gx(x.size());
    k::set_threads(static_cast<int>(st.range(0)));
    for (auto _ : st) {
        if constexpr (Reference) {
            k::reference::softmax_rows(x.data(), y.data(), rows, cols);
            k::reference::softmax_rows_backward(y.data(), x.data(), gx.data(), rows, cols);
        } else {
            k::softmax_rows(x.data(), y.data(), rows, cols);
            k::softmax_rows_backward(y.data(), x.data(), gx.data(), rows, cols);
        }
        benchmark::DoNotOptimize(gx.data());
    }
}

void thread_args(benchmark::internal::Benchmark* b)
{
    b->Arg(1);
    if (k::max_threads() > 1) b->Arg(k::max_threads());
}

}  // namespace

int main(int argc, char** argv)
{
    using Fn = void (*)(benchmark::State&);
    auto pair = [](const std::string& name, auto reference, auto production) {
        benchmark::RegisterBenchmark((name + "/reference").c_str(), reference)->Arg(1);
        thread_args(benchmark::RegisterBenchmark(name.c_str(), production));
    };
    for (const auto& [name, shape] : {std::pair{"conv_forward/block", block_shape()}, std::pair{"conv_forward/stem", stem_shape()}})
        pair(name, [s = shape](benchmark::State& st) { conv_forward<true>(st, s); },
             [s = shape](benchmark::State& st) { conv_forward<false>(st, s); });
    for (const auto& [name, shape] : {std::pair{"conv_backward/block", block_shape()}, std::pair{"conv_backward/stem", stem_shape()}})
        pair(name, [s = shape](benchmark::State& st) { conv_backward<true>(st, s); },
             [s = shape](benchmark::State& st) { conv_backward<false>(st, s); });
    pair("gemm_scores", Fn(gemm_scores<true>), Fn(gemm_scores<false>));
    pair("group_norm", Fn(group_norm<true>), Fn(group_norm<false>));
    pair("softmax", Fn(softmax<true>), Fn(softmax<false>));

    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
