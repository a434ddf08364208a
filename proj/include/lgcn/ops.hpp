#pragma once

#include <cstddef>

#include "lgcn/tensor.hpp"

/// Differentiable operators. Every forward has an explicit backward.
///
/// Backward conventions: gradients w.r.t. inputs are returned by value;
/// gradients w.r.t. parameters are *accumulated* (+=) into caller-owned
/// tensors, and a null pointer skips that computation entirely (frozen
/// parameters cost nothing).
namespace lgcn::ops {

/// C(m x n) = beta * C + op(A) * op(B), row-major, op = optional transpose.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c, double beta);

// ---- dense -----------------------------------------------------------------

/// y = x * w + b for x (n x in) or any tensor whose last axis is `in`.
/// w is (in x out); bias may be null.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias);
Tensor linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dw, Tensor* dbias,
                       bool need_dx = true);

struct LayerNormCache {
  Tensor xhat;                 // normalized input, same shape as x
  std::vector<double> rstd;    // one per row
};

/// Normalizes each row over the last axis, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, LayerNormCache* cache,
                  double eps = 1e-6);
Tensor layer_norm_backward(const LayerNormCache& cache, const Tensor& gamma, const Tensor& dy, Tensor* dgamma,
                           Tensor* dbeta);

// ---- elementwise -----------------------------------------------------------

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);
Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);
Tensor sigmoid(const Tensor& x);
/// Takes the sigmoid *output*.
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);
Tensor softplus(const Tensor& x);
Tensor softplus_backward(const Tensor& x, const Tensor& dy);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

double gelu_scalar(double x);
double sigmoid_scalar(double x);
double softplus_scalar(double x);

// ---- reductions ------------------------------------------------------------

/// Softmax over the last axis.
Tensor softmax(const Tensor& x);
/// Takes the softmax *output*.
Tensor softmax_backward(const Tensor& y, const Tensor& dy);

/// x / ||x||_2 over the whole tensor. Throws std::domain_error on a zero vector.
Tensor l2_normalize(const Tensor& x);
Tensor l2_normalize_backward(const Tensor& x, const Tensor& dy);

// ---- spatial ---------------------------------------------------------------

/// input H x W x Cin, kernel Cout x Cin x k x k, bias (Cout) or null.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, std::size_t stride, std::size_t padding);
Tensor conv2d_backward(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding,
                       const Tensor& dy, Tensor* dkernel, Tensor* dbias, bool need_dx = true);

/// input H x W x C, kernel C x k x k, stride 1, bias (C) or null.
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, std::size_t padding);
Tensor depthwise_conv2d_backward(const Tensor& input, const Tensor& kernel, std::size_t padding, const Tensor& dy,
                                 Tensor* dkernel, Tensor* dbias);

/// Align-corners-false bilinear resampling with edge clamping.
Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w);
Tensor bilinear_resize_backward(const Shape& input_shape, const Tensor& dy);

/// Non-overlapping average pool with a square window that must tile the map.
Tensor avg_pool(const Tensor& input, std::size_t window);
Tensor avg_pool_backward(const Shape& input_shape, std::size_t window, const Tensor& dy);

// ---- attention -------------------------------------------------------------

struct AttentionCache {
  Tensor weights;  // n x n row-softmax of scaled scores
};

/// softmax(Q K^T / sqrt(d_k)) V for Q, K (n x d_k) and V (n x d_v).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionCache* cache);

struct AttentionGrads {
  Tensor dq, dk, dv;
};
AttentionGrads attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionCache& cache,
                                  const Tensor& dout);

}  // namespace lgcn::ops
