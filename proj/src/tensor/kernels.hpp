#pragma once

#include "tensor/tensor.hpp"

// Raw forward/backward kernels behind the graph ops. Shapes are validated by
// the graph builder; the kernels assume conformable inputs.
namespace rawdiff::kernels {

Tensor conv2d(const Tensor& x, const Tensor& w);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor* dw);

Tensor linear(const Tensor& w, const Tensor& x);
void linear_backward(const Tensor& w, const Tensor& x, const Tensor& dy, Tensor* dw, Tensor* dx);

Tensor bias_add(const Tensor& x, const Tensor& b);
void bias_add_backward(const Tensor& dy, std::size_t bias_len, Tensor* dx, Tensor* db);

Tensor silu(const Tensor& x);
void silu_backward(const Tensor& x, const Tensor& dy, Tensor* dx);

inline constexpr double kGroupNormEps = 1e-5;
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups);
void group_norm_backward(const Tensor& x, const Tensor& gamma, int groups, const Tensor& dy, Tensor* dx,
                         Tensor* dgamma, Tensor* dbeta);

Tensor upsample2x(const Tensor& x);
void upsample2x_backward(const Tensor& dy, Tensor* dx);
Tensor downsample2x(const Tensor& x);
void downsample2x_backward(const Tensor& dy, Tensor* dx);

Tensor concat(const Tensor& a, const Tensor& b);

/// acc += v (same shape)
void accumulate(Tensor& acc, const Tensor& v);

} // namespace rawdiff::kernels
