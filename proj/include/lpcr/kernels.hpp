#pragma once

#include <cstddef>

namespace lpcr::kernels {

/// Conv geometry shared by all conv3d kernels. Cubic kernel, zero padding.
struct Conv3dDims {
    int c_in, d, h, w;       // input
    int c_out, k;            // kernels [c_out, c_in, k, k, k]
    int stride, padding;
    int od, oh, ow;          // output spatial extents

    static Conv3dDims make(int c_in, int d, int h, int w, int c_out, int k, int stride,
                           int padding);
    int in_numel() const { return c_in * d * h * w; }
    int out_numel() const { return c_out * od * oh * ow; }
    int weight_numel() const { return c_out * c_in * k * k * k; }
    int patch() const { return c_in * k * k * k; }          // GEMM K
    int positions() const { return od * oh * ow; }          // GEMM N
};

// Row-major GEMM, C overwritten. Deterministic for any thread count: each
// output element is reduced sequentially over k in ascending order.
void dgemm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool parallel);
// C[m,n] = A[k,m]^T * B[k,n]
void dgemm_tn(int m, int n, int k, const double* a, const double* b, double* c, bool parallel);
// C[m,n] = A[m,k] * B[n,k]^T
void dgemm_nt(int m, int n, int k, const double* a, const double* b, double* c, bool parallel);

// Direct triple-loop reference path.
void conv3d_forward_naive(const Conv3dDims& g, const double* x, const double* w, double* y);
void conv3d_backward_naive(const Conv3dDims& g, const double* x, const double* w,
                           const double* gy, double* gx, double* gw);

// im2col + GEMM path. Summation order per output element matches the naive
// path, so the two forwards agree to full precision.
void im2col(const Conv3dDims& g, const double* x, double* col, bool parallel);
void conv3d_forward_gemm(const Conv3dDims& g, const double* x, const double* w, double* y,
                         bool parallel);
void conv3d_backward_gemm(const Conv3dDims& g, const double* x, const double* w,
                          const double* gy, double* gx, double* gw, bool parallel);

}  // namespace lpcr::kernels
