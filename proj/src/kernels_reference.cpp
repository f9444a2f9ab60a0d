// Serial reference kernels. Direct loops, double accumulators, no tricks.

#include "onrw/kernels.hpp"

#include <cmath>
#include <vector>

namespace onrw::kernels::reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, const float* b, float beta,
          float* c)
{
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                const float av = trans_a ? a[p * m + i] : a[i * k + p];
                const float bv = trans_b ? b[j * k + p] : b[p * n + j];
                acc += static_cast<double>(av) * bv;
            }
            const float prev = beta == 0.0f ? 0.0f : beta * c[i * n + j];
            c[i * n + j] = prev + alpha * static_cast<float>(acc);
        }
    }
}

void conv2d_forward(const ConvShape& s, const float* in, const float* weight, const float* bias, float* out)
{
    const int oh = s.out_h(), ow = s.out_w();
    for (int b = 0; b < s.batch; ++b)
        for (int co = 0; co < s.out_ch; ++co)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    double acc = bias ? bias[co] : 0.0;
                    for (int ci = 0; ci < s.in_ch; ++ci)
                        for (int kh = 0; kh < s.kernel; ++kh)
                            for (int kw = 0; kw < s.kernel; ++kw) {
                                const int iy = y * s.stride - s.pad + kh, ix = x * s.stride - s.pad + kw;
                                if (iy < 0 || iy >= s.height || ix < 0 || ix >= s.width) continue;
                                acc += static_cast<double>(
                                           in[((b * s.in_ch + ci) * s.height + iy) * s.width + ix]) *
                                       weight[((co * s.in_ch + ci) * s.kernel + kh) * s.kernel + kw];
                            }
                    out[((b * s.out_ch + co) * oh + y) * ow + x] = static_cast<float>(acc);
                }
}

void conv2d_backward_input(const ConvShape& s, const float* grad_out, const float* weight, float* grad_in)
{
    const int oh = s.out_h(), ow = s.out_w();
    for (int b = 0; b < s.batch; ++b)
        for (int co = 0; co < s.out_ch; ++co)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    const float g = grad_out[((b * s.out_ch + co) * oh + y) * ow + x];
                    for (int ci = 0; ci < s.in_ch; ++ci)
                        for (int kh = 0; kh < s.kernel; ++kh)
                            for (int kw = 0; kw < s.kernel; ++kw) {
                                const int iy = y * s.stride - s.pad + kh, ix = x * s.stride - s.pad + kw;
                                if (iy < 0 || iy >= s.height || ix < 0 || ix >= s.width) continue;
                                grad_in[((b * s.in_ch + ci) * s.height + iy) * s.width + ix] +=
                                    g * weight[((co * s.in_ch + ci) * s.kernel + kh) * s.kernel + kw];
                            }
                }
}

void conv2d_backward_weight(const ConvShape& s, const float* in, const float* grad_out, float* grad_w,
                            float* grad_b)
{
    const int oh = s.out_h(), ow = s.out_w();
    for (int co = 0; co < s.out_ch; ++co) {
        double gb = 0.0;
        for (int ci = 0; ci < s.in_ch; ++ci)
            for (int kh = 0; kh < s.kernel; ++kh)
                for (int kw = 0; kw < s.kernel; ++kw) {
                    double acc = 0.0;
                    for (int b = 0; b < s.batch; ++b)
                        for (int y = 0; y < oh; ++y)
                            for (int x = 0; x < ow; ++x) {
                                const int iy = y * s.stride - s.pad + kh, ix = x * s.stride - s.pad + kw;
                                if (iy < 0 || iy >= s.height || ix < 0 || ix >= s.width) continue;
                                acc += static_cast<double>(grad_out[((b * s.out_ch + co) * oh + y) * ow + x]) *
                                       in[((b * s.in_ch + ci) * s.height + iy) * s.width + ix];
                            }
                    grad_w[((co * s.in_ch + ci) * s.kernel + kh) * s.kernel + kw] += static_cast<float>(acc);
                }
        if (grad_b) {
            for (int b = 0; b < s.batch; ++b)
                for (int i = 0; i < oh * ow; ++i) gb += grad_out[(b * s.out_ch + co) * oh * ow + i];
            grad_b[co] += static_cast<float>(gb);
        }
    }
}

void group_norm_forward(int batch, int channels, int spatial, int groups, float eps, const float* x,
                        const float* gamma, const float* beta, float* y, float* mean, float* rstd)
{
    const int cpg = channels / groups;
    for (int b = 0; b < batch; ++b)
        for (int g = 0; g < groups; ++g) {
            double s1 = 0.0, s2 = 0.0;
            const int n = cpg * spatial;
            for (int c = g * cpg; c < (g + 1) * cpg; ++c)
                for (int i = 0; i < spatial; ++i) s1 += x[(b * channels + c) * spatial + i];
            const double m = s1 / n;
            for (int c = g * cpg; c < (g + 1) * cpg; ++c)
                for (int i = 0; i < spatial; ++i) {
                    const double d = x[(b * channels + c) * spatial + i] - m;
                    s2 += d * d;
                }
            const double rs = 1.0 / std::sqrt(s2 / n + eps);
            mean[b * groups + g] = static_cast<float>(m);
            rstd[b * groups + g] = static_cast<float>(rs);
            for (int c = g * cpg; c < (g + 1) * cpg; ++c)
                for (int i = 0; i < spatial; ++i) {
                    const int o = (b * channels + c) * spatial + i;
                    y[o] = static_cast<float>((x[o] - m) * rs * (gamma ? gamma[c] : 1.0f) + (beta ? beta[c] : 0.0f));
                }
        }
}

void group_norm_backward(int batch, int channels, int spatial, int groups, const float* x, const float* gamma,
                         const float* mean, const float* rstd, const float* grad_y, float* grad_x,
                         float* grad_gamma, float* grad_beta)
{
    const int cpg = channels / groups;
    const int n = cpg * spatial;
    for (int b = 0; b < batch; ++b)
        for (int g = 0; g < groups; ++g) {
            const double m = mean[b * groups + g], rs = rstd[b * groups + g];
            double sdy = 0.0, sdyx = 0.0;
            for (int c = g * cpg; c < (g + 1) * cpg; ++c)
                for (int i = 0; i < spatial; ++i) {
                    const int o = (b * channels + c) * spatial + i;
                    const double dy = grad_y[o] * (gamma ? gamma[c] : 1.0f);
                    sdy += dy;
                    sdyx += dy * (x[o] - m) * rs;
                }
            for (int c = g * cpg; c < (g + 1) * cpg; ++c)
                for (int i = 0; i < spatial; ++i) {
                    const int o = (b * channels + c) * spatial + i;
                    const double xhat = (x[o] - m) * rs;
                    const double dy = grad_y[o] * (gamma ? gamma[c] : 1.0f);
                    if (grad_x) grad_x[o] += static_cast<float>(rs * (dy - sdy / n - xhat * sdyx / n));
                    if (grad_gamma) grad_gamma[c] += static_cast<float>(grad_y[o] * xhat);
                    if (grad_beta) grad_beta[c] += grad_y[o];
                }
        }
}

void softmax_rows(const float* x, float* y, std::size_t rows, int cols)
{
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = x[r * cols];
        for (int j = 1; j < cols; ++j) mx = std::max<double>(mx, x[r * cols + j]);
        double s = 0.0;
        std::vector<double> e(cols);
        for (int j = 0; j < cols; ++j) s += e[j] = std::exp(x[r * cols + j] - mx);
        for (int j = 0; j < cols; ++j) y[r * cols + j] = static_cast<float>(e[j] / s);
    }
}

void softmax_rows_backward(const float* y, const float* grad_y, float* grad_x, std::size_t rows, int cols)
{
    for (std::size_t r = 0; r < rows; ++r)
        for (int i = 0; i < cols; ++i) {
            double acc = 0.0;
            for (int j = 0; j < cols; ++j) {
                const double jac = y[r * cols + i] * ((i == j ? 1.0 : 0.0) - y[r * cols + j]);
                acc += jac * grad_y[r * cols + j];
            }
            grad_x[r * cols + i] += static_cast<float>(acc);
        }
}

}  // namespace onrw::kernels::reference
