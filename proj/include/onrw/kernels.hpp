#pragma once

// Compute kernels behind the autograd ops.
//
// The top-level functions are the production path: OpenMP loops over
// independent output slices (batch items, rows, channel groups) with Eigen
// GEMM inside. Every output element is reduced by exactly one thread in a
// fixed order, so results do not depend on the thread count.
//
// kernels::reference holds plain serial loops with the same signatures.
// They are only used by the tests and the kernel benchmark.

#include <cstddef>

namespace onrw::kernels {

/// C = alpha * op(A) * op(B) + beta * C, all row-major and contiguous.
/// op(A) is m x k, op(B) is k x n.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, const float* b, float beta,
          float* c);

/// Same as gemm, repeated over `batch` contiguous matrices.
void batched_gemm(int batch, bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                  const float* b, float beta, float* c);

struct ConvShape {
    int batch = 1;
    int in_ch = 1;
    int height = 1;
    int width = 1;
    int out_ch = 1;
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    int out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
    int out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
    bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

/// out = conv(in, weight) + bias. Zero padding. bias may be null.
void conv2d_forward(const ConvShape& s, const float* in, const float* weight, const float* bias, float* out);
/// grad_in += dL/din.
void conv2d_backward_input(const ConvShape& s, const float* grad_out, const float* weight, float* grad_in);
/// grad_w += dL/dw, grad_b += dL/db (grad_b may be null).
void conv2d_backward_weight(const ConvShape& s, const float* in, const float* grad_out, float* grad_w,
                            float* grad_b);

/// Group norm over [batch, channels, spatial]. mean/rstd receive batch*groups values.
void group_norm_forward(int batch, int channels, int spatial, int groups, float eps, const float* x,
                        const float* gamma, const float* beta, float* y, float* mean, float* rstd);
/// Accumulates into grad_x, grad_gamma, grad_beta (any may be null).
void group_norm_backward(int batch, int channels, int spatial, int groups, const float* x, const float* gamma,
                         const float* mean, const float* rstd, const float* grad_y, float* grad_x,
                         float* grad_gamma, float* grad_beta);

void softmax_rows(const float* x, float* y, std::size_t rows, int cols);
/// grad_x += J^T grad_y for y = softmax(x).
void softmax_rows_backward(const float* y, const float* grad_y, float* grad_x, std::size_t rows, int cols);

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, const float* b, float beta,
          float* c);
void conv2d_forward(const ConvShape& s, const float* in, const float* weight, const float* bias, float* out);
void conv2d_backward_input(const ConvShape& s, const float* grad_out, const float* weight, float* grad_in);
void conv2d_backward_weight(const ConvShape& s, const float* in, const float* grad_out, float* grad_w,
                            float* grad_b);
void group_norm_forward(int batch, int channels, int spatial, int groups, float eps, const float* x,
                        const float* gamma, const float* beta, float* y, float* mean, float* rstd);
void group_norm_backward(int batch, int channels, int spatial, int groups, const float* x, const float* gamma,
                         const float* mean, const float* rstd, const float* grad_y, float* grad_x,
                         float* grad_gamma, float* grad_beta);
void softmax_rows(const float* x, float* y, std::size_t rows, int cols);
void softmax_rows_backward(const float* y, const float* grad_y, float* grad_x, std::size_t rows, int cols);

}  // namespace reference

/// Number of OpenMP threads the kernels will use (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace onrw::kernels
