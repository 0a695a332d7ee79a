#include "tensor/kernels.hpp"

#include <cmath>
#include <cstring>
#include <vector>

namespace rawdiff::kernels {

namespace {

// cols[(c*k*k + ky*k + kx), y*W + x] = x[c, y+ky-pad, x+kx-pad], zero outside.
void im2col(const Tensor& x, std::size_t k, std::vector<double>& cols) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t P = H * W;
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    cols.assign(C * k * k * P, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        const double* plane = x.data() + c * P;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                double* row = cols.data() + ((c * k + ky) * k + kx) * P;
                const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
                const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
                const std::size_t x1 = dx > 0 ? W - static_cast<std::size_t>(dx) : W;
                for (std::size_t y = 0; y < H; ++y) {
                    const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H))
                        continue;
                    const double* src = plane + static_cast<std::size_t>(sy) * W;
                    double* dst = row + y * W;
                    for (std::size_t xx = x0; xx < x1; ++xx)
                        dst[xx] = src[static_cast<std::ptrdiff_t>(xx) + dx];
                }
            }
        }
    }
}

void col2im(const std::vector<double>& cols, std::size_t k, Tensor& dx) {
    const std::size_t C = dx.dim(0), H = dx.dim(1), W = dx.dim(2);
    const std::size_t P = H * W;
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    for (std::size_t c = 0; c < C; ++c) {
        double* plane = dx.data() + c * P;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const double* row = cols.data() + ((c * k + ky) * k + kx) * P;
                const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const auto dxo = static_cast<std::ptrdiff_t>(kx) - pad;
                const std::size_t x0 = dxo < 0 ? static_cast<std::size_t>(-dxo) : 0;
                const std::size_t x1 = dxo > 0 ? W - static_cast<std::size_t>(dxo) : W;
                for (std::size_t y = 0; y < H; ++y) {
                    const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H))
                        continue;
                    double* dst = plane + static_cast<std::size_t>(sy) * W;
                    const double* src = row + y * W;
                    for (std::size_t xx = x0; xx < x1; ++xx)
                        dst[static_cast<std::ptrdiff_t>(xx) + dxo] += src[xx];
                }
            }
        }
    }
}

// out[M,N] (+)= a[M,K] * b[K,N]
void gemm_nn(const double* a, const double* b, double* out, std::size_t M, std::size_t K, std::size_t N) {
    for (std::size_t m = 0; m < M; ++m) {
        double* orow = out + m * N;
        const double* arow = a + m * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double s = arow[k];
            const double* brow = b + k * N;
            for (std::size_t n = 0; n < N; ++n)
                orow[n] += s * brow[n];
        }
    }
}

// out[M,K] (+)= a[M,N] * b[K,N]^T
void gemm_nt(const double* a, const double* b, double* out, std::size_t M, std::size_t N, std::size_t K) {
    for (std::size_t m = 0; m < M; ++m) {
        const double* arow = a + m * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double* brow = b + k * N;
            double s = 0.0;
            for (std::size_t n = 0; n < N; ++n)
                s += arow[n] * brow[n];
            out[m * K + k] += s;
        }
    }
}

// out[K,N] (+)= a[M,K]^T * b[M,N]
void gemm_tn(const double* a, const double* b, double* out, std::size_t M, std::size_t K, std::size_t N) {
    for (std::size_t m = 0; m < M; ++m) {
        const double* arow = a + m * K;
        const double* brow = b + m * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double s = arow[k];
            double* orow = out + k * N;
            for (std::size_t n = 0; n < N; ++n)
                orow[n] += s * brow[n];
        }
    }
}

double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w) {
    const std::size_t O = w.dim(0), k = w.dim(2);
    const std::size_t H = x.dim(1), W = x.dim(2), P = H * W;
    const std::size_t K = x.dim(0) * k * k;
    Tensor y({O, H, W});
    if (k == 1) {
        gemm_nn(w.data(), x.data(), y.data(), O, K, P);
    } else {
        thread_local std::vector<double> cols;
        im2col(x, k, cols);
        gemm_nn(w.data(), cols.data(), y.data(), O, K, P);
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor* dw) {
    const std::size_t O = w.dim(0), k = w.dim(2);
    const std::size_t P = x.dim(1) * x.dim(2);
    const std::size_t K = x.dim(0) * k * k;
    if (k == 1) {
        if (dw)
            gemm_nt(dy.data(), x.data(), dw->data(), O, P, K);
        if (dx)
            gemm_tn(w.data(), dy.data(), dx->data(), O, K, P);
        return;
    }
    thread_local std::vector<double> cols;
    if (dw) {
        im2col(x, k, cols);
        gemm_nt(dy.data(), cols.data(), dw->data(), O, P, K);
    }
    if (dx) {
        cols.assign(K * P, 0.0);
        gemm_tn(w.data(), dy.data(), cols.data(), O, K, P);
        col2im(cols, k, *dx);
    }
}

Tensor linear(const Tensor& w, const Tensor& x) {
    const std::size_t out = w.dim(0), in = w.dim(1);
    const std::size_t n = x.rank() == 2 ? x.dim(1) : 1;
    Tensor y(x.rank() == 2 ? Shape{out, n} : Shape{out});
    gemm_nn(w.data(), x.data(), y.data(), out, in, n);
    return y;
}

void linear_backward(const Tensor& w, const Tensor& x, const Tensor& dy, Tensor* dw, Tensor* dx) {
    const std::size_t out = w.dim(0), in = w.dim(1);
    const std::size_t n = x.rank() == 2 ? x.dim(1) : 1;
    if (dw)
        gemm_nt(dy.data(), x.data(), dw->data(), out, n, in);
    if (dx)
        gemm_tn(w.data(), dy.data(), dx->data(), out, in, n);
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
    Tensor y = x;
    const std::size_t inner = x.size() / b.size();
    for (std::size_t c = 0; c < b.size(); ++c) {
        double* row = y.data() + c * inner;
        const double v = b[c];
        for (std::size_t i = 0; i < inner; ++i)
            row[i] += v;
    }
    return y;
}

void bias_add_backward(const Tensor& dy, std::size_t bias_len, Tensor* dx, Tensor* db) {
    if (dx)
        accumulate(*dx, dy);
    if (db) {
        const std::size_t inner = dy.size() / bias_len;
        for (std::size_t c = 0; c < bias_len; ++c) {
            const double* row = dy.data() + c * inner;
            double s = 0.0;
            for (std::size_t i = 0; i < inner; ++i)
                s += row[i];
            (*db)[c] += s;
        }
    }
}

Tensor silu(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = x[i] * sigmoid(x[i]);
    return y;
}

void silu_backward(const Tensor& x, const Tensor& dy, Tensor* dx) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = sigmoid(x[i]);
        (*dx)[i] += dy[i] * s * (1.0 + x[i] * (1.0 - s));
    }
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups) {
    const std::size_t C = x.dim(0), P = x.dim(1) * x.dim(2);
    const std::size_t G = static_cast<std::size_t>(groups), cpg = C / G, n = cpg * P;
    Tensor y(x.shape());
    for (std::size_t g = 0; g < G; ++g) {
        const double* xs = x.data() + g * n;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            mean += xs[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            var += (xs[i] - mean) * (xs[i] - mean);
        var /= static_cast<double>(n);
        const double rstd = 1.0 / std::sqrt(var + kGroupNormEps);
        for (std::size_t c = g * cpg; c < (g + 1) * cpg; ++c) {
            const double* xc = x.data() + c * P;
            double* yc = y.data() + c * P;
            for (std::size_t i = 0; i < P; ++i)
                yc[i] = (xc[i] - mean) * rstd * gamma[c] + beta[c];
        }
    }
    return y;
}

void group_norm_backward(const Tensor& x, const Tensor& gamma, int groups, const Tensor& dy, Tensor* dx,
                         Tensor* dgamma, Tensor* dbeta) {
    const std::size_t C = x.dim(0), P = x.dim(1) * x.dim(2);
    const std::size_t G = static_cast<std::size_t>(groups), cpg = C / G, n = cpg * P;
    std::vector<double> xhat(n), dxhat(n);
    for (std::size_t g = 0; g < G; ++g) {
        const double* xs = x.data() + g * n;
        const double* dys = dy.data() + g * n;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            mean += xs[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            var += (xs[i] - mean) * (xs[i] - mean);
        var /= static_cast<double>(n);
        const double rstd = 1.0 / std::sqrt(var + kGroupNormEps);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < cpg; ++j) {
            const std::size_t c = g * cpg + j;
            double sg = 0.0, sb = 0.0;
            for (std::size_t i = 0; i < P; ++i) {
                const std::size_t idx = j * P + i;
                xhat[idx] = (xs[idx] - mean) * rstd;
                dxhat[idx] = dys[idx] * gamma[c];
                sum_dxhat += dxhat[idx];
                sum_dxhat_xhat += dxhat[idx] * xhat[idx];
                sg += dys[idx] * xhat[idx];
                sb += dys[idx];
            }
            if (dgamma)
                (*dgamma)[c] += sg;
            if (dbeta)
                (*dbeta)[c] += sb;
        }
        if (dx) {
            double* dxs = dx->data() + g * n;
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                dxs[i] += rstd * (dxhat[i] - inv_n * sum_dxhat - xhat[i] * inv_n * sum_dxhat_xhat);
        }
    }
}

Tensor upsample2x(const Tensor& x) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor y({C, 2 * H, 2 * W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t yy = 0; yy < 2 * H; ++yy)
            for (std::size_t xx = 0; xx < 2 * W; ++xx)
                y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
    return y;
}

void upsample2x_backward(const Tensor& dy, Tensor* dx) {
    const std::size_t C = dx->dim(0), H = dx->dim(1), W = dx->dim(2);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t yy = 0; yy < 2 * H; ++yy)
            for (std::size_t xx = 0; xx < 2 * W; ++xx)
                dx->at(c, yy / 2, xx / 2) += dy.at(c, yy, xx);
}

Tensor downsample2x(const Tensor& x) {
    const std::size_t C = x.dim(0), H = x.dim(1) / 2, W = x.dim(2) / 2;
    Tensor y({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t yy = 0; yy < H; ++yy)
            for (std::size_t xx = 0; xx < W; ++xx)
                y.at(c, yy, xx) = x.at(c, 2 * yy, 2 * xx);
    return y;
}

void downsample2x_backward(const Tensor& dy, Tensor* dx) {
    const std::size_t C = dy.dim(0), H = dy.dim(1), W = dy.dim(2);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t yy = 0; yy < H; ++yy)
            for (std::size_t xx = 0; xx < W; ++xx)
                dx->at(c, 2 * yy, 2 * xx) += dy.at(c, yy, xx);
}

Tensor concat(const Tensor& a, const Tensor& b) {
    Shape shape = a.shape();
    shape[0] += b.dim(0);
    std::vector<double> values;
    values.reserve(a.size() + b.size());
    values.insert(values.end(), a.values().begin(), a.values().end());
    values.insert(values.end(), b.values().begin(), b.values().end());
    return Tensor(std::move(shape), std::move(values));
}

void accumulate(Tensor& acc, const Tensor& v) {
    double* a = acc.data();
    const double* s = v.data();
    for (std::size_t i = 0; i < acc.size(); ++i)
        a[i] += s[i];
}

} // namespace rawdiff::kernels
