#include "lpcr/kernels.hpp"

#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpcr::kernels {

Conv3dDims Conv3dDims::make(int c_in, int d, int h, int w, int c_out, int k, int stride,
                            int padding) {
    if (stride < 1) throw std::invalid_argument("conv3d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv3d: negative padding");
    Conv3dDims g{c_in, d, h, w, c_out, k, stride, padding, 0, 0, 0};
    if (k > d + 2 * padding || k > h + 2 * padding || k > w + 2 * padding)
        throw std::invalid_argument("conv3d: kernel " + std::to_string(k) +
                                    " larger than padded input " + std::to_string(d + 2 * padding));
    g.od = (d + 2 * padding - k) / stride + 1;
    g.oh = (h + 2 * padding - k) / stride + 1;
    g.ow = (w + 2 * padding - k) / stride + 1;
    return g;
}

void dgemm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool parallel) {
#pragma omp parallel for schedule(static) if (parallel && m > 1)
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void dgemm_tn(int m, int n, int k, const double* a, const double* b, double* c, bool parallel) {
#pragma omp parallel for schedule(static) if (parallel && m > 1)
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = 0.0;
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<size_t>(p) * m + i];
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void dgemm_nt(int m, int n, int k, const double* a, const double* b, double* c, bool parallel) {
#pragma omp parallel for schedule(static) if (parallel && m > 1)
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
}

void conv3d_forward_naive(const Conv3dDims& g, const double* x, const double* w, double* y) {
    const int k = g.k;
    for (int co = 0; co < g.c_out; ++co)
        for (int od = 0; od < g.od; ++od)
            for (int oh = 0; oh < g.oh; ++oh)
                for (int ow = 0; ow < g.ow; ++ow) {
                    double acc = 0.0;
                    for (int ci = 0; ci < g.c_in; ++ci)
                        for (int kd = 0; kd < k; ++kd) {
                            const int id = od * g.stride + kd - g.padding;
                            if (id < 0 || id >= g.d) continue;
                            for (int kh = 0; kh < k; ++kh) {
                                const int ih = oh * g.stride + kh - g.padding;
                                if (ih < 0 || ih >= g.h) continue;
                                for (int kw = 0; kw < k; ++kw) {
                                    const int iw = ow * g.stride + kw - g.padding;
                                    if (iw < 0 || iw >= g.w) continue;
                                    acc += x[((static_cast<size_t>(ci) * g.d + id) * g.h + ih) * g.w + iw] *
                                           w[(((static_cast<size_t>(co) * g.c_in + ci) * k + kd) * k + kh) * k + kw];
                                }
                            }
                        }
                    y[((static_cast<size_t>(co) * g.od + od) * g.oh + oh) * g.ow + ow] = acc;
                }
}

void im2col(const Conv3dDims& g, const double* x, double* col, bool parallel) {
    const int k = g.k, pos = g.positions();
    const int rows = g.patch();
#pragma omp parallel for schedule(static) if (parallel && rows > 1)
    for (int r = 0; r < rows; ++r) {
        const int kw = r % k, kh = (r / k) % k, kd = (r / (k * k)) % k, ci = r / (k * k * k);
        double* out = col + static_cast<size_t>(r) * pos;
        int p = 0;
        for (int od = 0; od < g.od; ++od) {
            const int id = od * g.stride + kd - g.padding;
            for (int oh = 0; oh < g.oh; ++oh) {
                const int ih = oh * g.stride + kh - g.padding;
                for (int ow = 0; ow < g.ow; ++ow, ++p) {
                    const int iw = ow * g.stride + kw - g.padding;
                    out[p] = (id >= 0 && id < g.d && ih >= 0 && ih < g.h && iw >= 0 && iw < g.w)
                                 ? x[((static_cast<size_t>(ci) * g.d + id) * g.h + ih) * g.w + iw]
                                 : 0.0;
                }
            }
        }
    }
}

void conv3d_forward_gemm(const Conv3dDims& g, const double* x, const double* w, double* y,
                         bool parallel) {
    std::vector<double> col(static_cast<size_t>(g.patch()) * g.positions());
    im2col(g, x, col.data(), parallel);
    dgemm_nn(g.c_out, g.positions(), g.patch(), w, col.data(), y, parallel);
}

// Gradients as gathers: each gx / gw element is reduced by exactly one
// iteration, so the parallel result is bitwise independent of thread count.
void conv3d_backward_naive(const Conv3dDims& g, const double* x, const double* w,
                           const double* gy, double* gx, double* gw) {
    const int k = g.k;
    if (gx) {
        for (int ci = 0; ci < g.c_in; ++ci)
            for (int id = 0; id < g.d; ++id)
                for (int ih = 0; ih < g.h; ++ih)
                    for (int iw = 0; iw < g.w; ++iw) {
                        double acc = 0.0;
                        for (int co = 0; co < g.c_out; ++co)
                            for (int kd = 0; kd < k; ++kd) {
                                const int t_d = id + g.padding - kd;
                                if (t_d < 0 || t_d % g.stride) continue;
                                const int od = t_d / g.stride;
                                if (od >= g.od) continue;
                                for (int kh = 0; kh < k; ++kh) {
                                    const int t_h = ih + g.padding - kh;
                                    if (t_h < 0 || t_h % g.stride) continue;
                                    const int oh = t_h / g.stride;
                                    if (oh >= g.oh) continue;
                                    for (int kw = 0; kw < k; ++kw) {
                                        const int t_w = iw + g.padding - kw;
                                        if (t_w < 0 || t_w % g.stride) continue;
                                        const int ow = t_w / g.stride;
                                        if (ow >= g.ow) continue;
                                        acc += gy[((static_cast<size_t>(co) * g.od + od) * g.oh + oh) * g.ow + ow] *
                                               w[(((static_cast<size_t>(co) * g.c_in + ci) * k + kd) * k + kh) * k + kw];
                                    }
                                }
                            }
                        gx[((static_cast<size_t>(ci) * g.d + id) * g.h + ih) * g.w + iw] += acc;
                    }
    }
    if (gw) {
        for (int co = 0; co < g.c_out; ++co)
            for (int ci = 0; ci < g.c_in; ++ci)
                for (int kd = 0; kd < k; ++kd)
                    for (int kh = 0; kh < k; ++kh)
                        for (int kw = 0; kw < k; ++kw) {
                            double acc = 0.0;
                            for (int od = 0; od < g.od; ++od) {
                                const int id = od * g.stride + kd - g.padding;
                                if (id < 0 || id >= g.d) continue;
                                for (int oh = 0; oh < g.oh; ++oh) {
                                    const int ih = oh * g.stride + kh - g.padding;
                                    if (ih < 0 || ih >= g.h) continue;
                                    for (int ow = 0; ow < g.ow; ++ow) {
                                        const int iw = ow * g.stride + kw - g.padding;
                                        if (iw < 0 || iw >= g.w) continue;
                                        acc += gy[((static_cast<size_t>(co) * g.od + od) * g.oh + oh) * g.ow + ow] *
                                               x[((static_cast<size_t>(ci) * g.d + id) * g.h + ih) * g.w + iw];
                                    }
                                }
                            }
                            gw[(((static_cast<size_t>(co) * g.c_in + ci) * k + kd) * k + kh) * k + kw] += acc;
                        }
    }
}

void conv3d_backward_gemm(const Conv3dDims& g, const double* x, const double* w,
                          const double* gy, double* gx, double* gw, bool parallel) {
    const int pos = g.positions(), rows = g.patch(), k = g.k;
    if (gw) {
        std::vector<double> col(static_cast<size_t>(rows) * pos);
        im2col(g, x, col.data(), parallel);
        std::vector<double> gw_tmp(static_cast<size_t>(g.c_out) * rows);
        dgemm_nt(g.c_out, rows, pos, gy, col.data(), gw_tmp.data(), parallel);
        for (size_t i = 0; i < gw_tmp.size(); ++i) gw[i] += gw_tmp[i];
    }
    if (gx) {
        // gcol[rows, pos] = W^T (c_out, rows) * gy(c_out, pos), then col2im
        // as a gather over input voxels.
        std::vector<double> gcol(static_cast<size_t>(rows) * pos);
        dgemm_tn(rows, pos, g.c_out, w, gy, gcol.data(), parallel);
        const int vox = g.d * g.h * g.w;
#pragma omp parallel for schedule(static) if (parallel && g.c_in * vox > 2048)
        for (int v = 0; v < g.c_in * vox; ++v) {
            const int ci = v / vox;
            const int id = (v / (g.h * g.w)) % g.d, ih = (v / g.w) % g.h, iw = v % g.w;
            double acc = 0.0;
            for (int kd = 0; kd < k; ++kd) {
                const int t_d = id + g.padding - kd;
                if (t_d < 0 || t_d % g.stride) continue;
                const int od = t_d / g.stride;
                if (od >= g.od) continue;
                for (int kh = 0; kh < k; ++kh) {
                    const int t_h = ih + g.padding - kh;
                    if (t_h < 0 || t_h % g.stride) continue;
                    const int oh = t_h / g.stride;
                    if (oh >= g.oh) continue;
                    for (int kw = 0; kw < k; ++kw) {
                        const int t_w = iw + g.padding - kw;
                        if (t_w < 0 || t_w % g.stride) continue;
                        const int ow = t_w / g.stride;
                        if (ow >= g.ow) continue;
                        const int r = ((ci * k + kd) * k + kh) * k + kw;
                        acc += gcol[static_cast<size_t>(r) * pos + (od * g.oh + oh) * g.ow + ow];
                    }
                }
            }
            gx[v] += acc;
        }
    }
}

}  // namespace lpcr::kernels
