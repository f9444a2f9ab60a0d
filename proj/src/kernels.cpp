#include "onrw/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace onrw::kernels {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Tiny elementwise loops are not worth a parallel region.
constexpr std::size_t kParallelGrain = 1 << 14;

// Output columns x whose input column x*stride - pad + kw lies inside the image.
std::pair<int, int> valid_cols(const ConvShape& s, int kw, int ow)
{
    const int off = kw - s.pad;
    int x0 = off >= 0 ? 0 : (-off + s.stride - 1) / s.stride;
    int x1 = (s.width - off + s.stride - 1) / s.stride;
    x0 = std::min(x0, ow);
    x1 = std::clamp(x1, x0, ow);
    return {x0, x1};
}

void im2col(const ConvShape& s, const float* in, float* col)
{
    const int oh = s.out_h(), ow = s.out_w();
    const int p = oh * ow;
    for (int ci = 0; ci < s.in_ch; ++ci) {
        const float* src = in + static_cast<std::size_t>(ci) * s.height * s.width;
        for (int kh = 0; kh < s.kernel; ++kh) {
            for (int kw = 0; kw < s.kernel; ++kw) {
                float* dst = col + static_cast<std::size_t>((ci * s.kernel + kh) * s.kernel + kw) * p;
                for (int y = 0; y < oh; ++y) {
                    const int iy = y * s.stride - s.pad + kh;
                    float* row = dst + y * ow;
                    if (iy < 0 || iy >= s.height) {
                        std::fill(row, row + ow, 0.0f);
                        continue;
                    }
                    const float* srow = src + iy * s.width - s.pad + kw;
                    const auto [x0, x1] = valid_cols(s, kw, ow);
                    std::fill(row, row + x0, 0.0f);
                    if (s.stride == 1) {
                        std::copy(srow + x0, srow + x1, row + x0);
                    } else {
                        for (int x = x0; x < x1; ++x) row[x] = srow[x * s.stride];
                    }
                    std::fill(row + x1, row + ow, 0.0f);
                }
            }
        }
    }
}

void col2im_add(const ConvShape& s, const float* col, float* in)
{
    const int oh = s.out_h(), ow = s.out_w();
    const int p = oh * ow;
    for (int ci = 0; ci < s.in_ch; ++ci) {
        float* dst = in + static_cast<std::size_t>(ci) * s.height * s.width;
        for (int kh = 0; kh < s.kernel; ++kh) {
            for (int kw = 0; kw < s.kernel; ++kw) {
                const float* src = col + static_cast<std::size_t>((ci * s.kernel + kh) * s.kernel + kw) * p;
                for (int y = 0; y < oh; ++y) {
                    const int iy = y * s.stride - s.pad + kh;
                    if (iy < 0 || iy >= s.height) continue;
                    float* drow = dst + iy * s.width - s.pad + kw;
                    const float* row = src + y * ow;
                    const auto [x0, x1] = valid_cols(s, kw, ow);
                    for (int x = x0; x < x1; ++x) drow[x * s.stride] += row[x];
                }
            }
        }
    }
}

}  // namespace

int max_threads()
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n)
{
#ifdef _OPENMP
    omp_set_num_threads(std::max(1, n));
#else
    (void)n;
#endif
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, const float* b, float beta,
          float* c)
{
    MutMap cm(c, m, n);
    if (beta == 0.0f)
        cm.setZero();
    else if (beta != 1.0f)
        cm *= beta;
    if (m == 0 || n == 0 || k == 0) return;
    const ConstMap am(a, trans_a ? k : m, trans_a ? m : k);
    const ConstMap bm(b, trans_b ? n : k, trans_b ? k : n);
    if (!trans_a && !trans_b)
        cm.noalias() += alpha * am * bm;
    else if (trans_a && !trans_b)
        cm.noalias() += alpha * am.transpose() * bm;
    else if (!trans_a && trans_b)
        cm.noalias() += alpha * am * bm.transpose();
    else
        cm.noalias() += alpha * am.transpose() * bm.transpose();
}

void batched_gemm(int batch, bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                  const float* b, float beta, float* c)
{
    const std::size_t sa = static_cast<std::size_t>(m) * k, sb = static_cast<std::size_t>(k) * n,
                      sc = static_cast<std::size_t>(m) * n;
#pragma omp parallel for schedule(static) if (batch > 1 && sc * k > kParallelGrain)
    for (int i = 0; i < batch; ++i) gemm(trans_a, trans_b, m, n, k, alpha, a + i * sa, b + i * sb, beta, c + i * sc);
}

void conv2d_forward(const ConvShape& s, const float* in, const float* weight, const float* bias, float* out)
{
    const int p = s.out_h() * s.out_w();
    const int r = s.in_ch * s.kernel * s.kernel;
    const std::size_t in_stride = static_cast<std::size_t>(s.in_ch) * s.height * s.width;
    const std::size_t out_stride = static_cast<std::size_t>(s.out_ch) * p;
#pragma omp parallel if (s.batch > 1)
    {
        std::vector<float> col;
        if (!s.pointwise()) col.resize(static_cast<std::size_t>(r) * p);
#pragma omp for schedule(static)
        for (int b = 0; b < s.batch; ++b) {
            const float* src = in + b * in_stride;
            if (!s.pointwise()) {
                im2col(s, src, col.data());
                src = col.data();
            }
            float* dst = out + b * out_stride;
            gemm(false, false, s.out_ch, p, r, 1.0f, weight, src, 0.0f, dst);
            if (bias) {
                for (int co = 0; co < s.out_ch; ++co) {
                    float* row = dst + static_cast<std::size_t>(co) * p;
                    const float bv = bias[co];
                    for (int i = 0; i < p; ++i) row[i] += bv;
                }
            }
        }
    }
}

void conv2d_backward_input(const ConvShape& s, const float* grad_out, const float* weight, float* grad_in)
{
    const int p = s.out_h() * s.out_w();
    const int r = s.in_ch * s.kernel * s.kernel;
    const std::size_t in_stride = static_cast<std::size_t>(s.in_ch) * s.height * s.width;
    const std::size_t out_stride = static_cast<std::size_t>(s.out_ch) * p;
#pragma omp parallel if (s.batch > 1)
    {
        std::vector<float> col;
        if (!s.pointwise()) col.resize(static_cast<std::size_t>(r) * p);
#pragma omp for schedule(static)
        for (int b = 0; b < s.batch; ++b) {
            const float* g = grad_out + b * out_stride;
            if (s.pointwise()) {
                gemm(true, false, r, p, s.out_ch, 1.0f, weight, g, 1.0f, grad_in + b * in_stride);
            } else {
                gemm(true, false, r, p, s.out_ch, 1.0f, weight, g, 0.0f, col.data());
                col2im_add(s, col.data(), grad_in + b * in_stride);
            }
        }
    }
}

void conv2d_backward_weight(const ConvShape& s, const float* in, const float* grad_out, float* grad_w,
                            float* grad_b)
{
    const int p = s.out_h() * s.out_w();
    const int r = s.in_ch * s.kernel * s.kernel;
    const std::size_t in_stride = static_cast<std::size_t>(s.in_ch) * s.height * s.width;
    const std::size_t out_stride = static_cast<std::size_t>(s.out_ch) * p;
    const std::size_t total = static_cast<std::size_t>(s.batch) * p;

    // Gather [R, B*P] columns and [Co, B*P] gradients, then one GEMM.
    std::vector<float> col(static_cast<std::size_t>(r) * total);
    std::vector<float> g(static_cast<std::size_t>(s.out_ch) * total);
#pragma omp parallel if (s.batch > 1)
    {
        std::vector<float> local;
        if (!s.pointwise()) local.resize(static_cast<std::size_t>(r) * p);
#pragma omp for schedule(static)
        for (int b = 0; b < s.batch; ++b) {
            const float* src = in + b * in_stride;
            if (!s.pointwise()) {
                im2col(s, src, local.data());
                src = local.data();
            }
            for (int i = 0; i < r; ++i)
                std::copy_n(src + static_cast<std::size_t>(i) * p, p, col.data() + i * total + b * p);
            const float* gs = grad_out + b * out_stride;
            for (int co = 0; co < s.out_ch; ++co)
                std::copy_n(gs + static_cast<std::size_t>(co) * p, p, g.data() + co * total + b * p);
        }
    }
    gemm(false, true, s.out_ch, r, static_cast<int>(total), 1.0f, g.data(), col.data(), 1.0f, grad_w);
    if (grad_b) {
        for (int co = 0; co < s.out_ch; ++co) {
            const float* row = g.data() + co * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < total; ++i) acc += row[i];
            grad_b[co] += static_cast<float>(acc);
        }
    }
}

void group_norm_forward(int batch, int channels, int spatial, int groups, float eps, const float* x,
                        const float* gamma, const float* beta, float* y, float* mean, float* rstd)
{
    const int cpg = channels / groups;
    const std::size_t n = static_cast<std::size_t>(cpg) * spatial;
#pragma omp parallel for schedule(static) if (static_cast<std::size_t>(batch) * channels * spatial > kParallelGrain)
    for (int bg = 0; bg < batch * groups; ++bg) {
        const int b = bg / groups, gi = bg % groups;
        const std::size_t off = (static_cast<std::size_t>(b) * channels + gi * cpg) * spatial;
        double s1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) s1 += x[off + i];
        const double m = s1 / static_cast<double>(n);
        double s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = x[off + i] - m;
            s2 += d * d;
        }
        const double rs = 1.0 / std::sqrt(s2 / static_cast<double>(n) + eps);
        mean[bg] = static_cast<float>(m);
        rstd[bg] = static_cast<float>(rs);
        for (int c = 0; c < cpg; ++c) {
            const int ch = gi * cpg + c;
            const float ga = gamma ? gamma[ch] : 1.0f, be = beta ? beta[ch] : 0.0f;
            const float fm = static_cast<float>(m), fr = static_cast<float>(rs);
            const std::size_t o = off + static_cast<std::size_t>(c) * spatial;
            for (int i = 0; i < spatial; ++i) y[o + i] = (x[o + i] - fm) * fr * ga + be;
        }
    }
}

void group_norm_backward(int batch, int channels, int spatial, int groups, const float* x, const float* gamma,
                         const float* mean, const float* rstd, const float* grad_y, float* grad_x,
                         float* grad_gamma, float* grad_beta)
{
    const int cpg = channels / groups;
    const std::size_t n = static_cast<std::size_t>(cpg) * spatial;
    if (grad_x) {
#pragma omp parallel for schedule(static) if (static_cast<std::size_t>(batch) * channels * spatial > kParallelGrain)
        for (int bg = 0; bg < batch * groups; ++bg) {
            const int b = bg / groups, gi = bg % groups;
            const std::size_t off = (static_cast<std::size_t>(b) * channels + gi * cpg) * spatial;
            const float m = mean[bg], rs = rstd[bg];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int c = 0; c < cpg; ++c) {
                const float ga = gamma ? gamma[gi * cpg + c] : 1.0f;
                const std::size_t o = off + static_cast<std::size_t>(c) * spatial;
                for (int i = 0; i < spatial; ++i) {
                    const float dy = grad_y[o + i] * ga;
                    sum_dy += dy;
                    sum_dy_xhat += dy * (x[o + i] - m) * rs;
                }
            }
            const float a = static_cast<float>(sum_dy / static_cast<double>(n));
            const float bcoef = static_cast<float>(sum_dy_xhat / static_cast<double>(n));
            for (int c = 0; c < cpg; ++c) {
                const float ga = gamma ? gamma[gi * cpg + c] : 1.0f;
                const std::size_t o = off + static_cast<std::size_t>(c) * spatial;
                for (int i = 0; i < spatial; ++i) {
                    const float xhat = (x[o + i] - m) * rs;
                    grad_x[o + i] += rs * (grad_y[o + i] * ga - a - xhat * bcoef);
                }
            }
        }
    }
    if (grad_gamma || grad_beta) {
        for (int ch = 0; ch < channels; ++ch) {
            const int gi = ch / cpg;
            double sg = 0.0, sb = 0.0;
            for (int b = 0; b < batch; ++b) {
                const int bg = b * groups + gi;
                const std::size_t o = (static_cast<std::size_t>(b) * channels + ch) * spatial;
                for (int i = 0; i < spatial; ++i) {
                    sg += grad_y[o + i] * (x[o + i] - mean[bg]) * rstd[bg];
                    sb += grad_y[o + i];
                }
            }
            if (grad_gamma) grad_gamma[ch] += static_cast<float>(sg);
            if (grad_beta) grad_beta[ch] += static_cast<float>(sb);
        }
    }
}

void softmax_rows(const float* x, float* y, std::size_t rows, int cols)
{
#pragma omp parallel for schedule(static) if (rows * cols > kParallelGrain)
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x + r * cols;
        float* yr = y + r * cols;
        float mx = xr[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        float s = 0.0f;
        for (int j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        const float inv = 1.0f / s;
        for (int j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

void softmax_rows_backward(const float* y, const float* grad_y, float* grad_x, std::size_t rows, int cols)
{
#pragma omp parallel for schedule(static) if (rows * cols > kParallelGrain)
    for (std::size_t r = 0; r < rows; ++r) {
        const float* yr = y + r * cols;
        const float* gr = grad_y + r * cols;
        float dot = 0.0f;
        for (int j = 0; j < cols; ++j) dot += yr[j] * gr[j];
        float* gx = grad_x + r * cols;
        for (int j = 0; j < cols; ++j) gx[j] += yr[j] * (gr[j] - dot);
    }
}

}  // namespace onrw::kernels
