#include "lgcn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace lgcn::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }
std::size_t rows_of(const Tensor& t) { return t.size() / last_dim(t); }

Tensor map_elementwise(const Tensor& x, double (*f)(double)) {
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

void check_conv_extent(std::size_t extent, std::size_t padding, std::size_t k, const char* axis) {
  if (extent + 2 * padding < k) {
    throw ShapeError(std::string("conv2d: padded ") + axis + " extent " + std::to_string(extent + 2 * padding) +
                     " smaller than kernel " + std::to_string(k));
  }
}

// (Ho*Wo) x (Cin*k*k), column order (ci, ky, kx) to match the kernel layout.
RowMat im2col(const Tensor& in, std::size_t k, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo) {
  const std::size_t h = in.dim(0), w = in.dim(1), c = in.dim(2);
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(ho * wo), static_cast<Eigen::Index>(c * k * k));
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      double* row = cols.data() + (oy * wo + ox) * c * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const double* src = in.ptr() + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
          for (std::size_t ci = 0; ci < c; ++ci) row[(ci * k + ky) * k + kx] = src[ci];
        }
      }
    }
  }
  return cols;
}

struct ResampleTap {
  std::size_t i0, i1;
  double frac;
};

std::vector<ResampleTap> resample_taps(std::size_t in, std::size_t out) {
  std::vector<ResampleTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[i] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c, double beta) {
  const auto em = static_cast<Eigen::Index>(m), en = static_cast<Eigen::Index>(n), ek = static_cast<Eigen::Index>(k);
  MatMap cm(c, em, en);
  if (beta == 0.0) {
    cm.setZero();
  } else if (beta != 1.0) {
    cm *= beta;
  }
  if (!trans_a && !trans_b) {
    cm.noalias() += ConstMatMap(a, em, ek) * ConstMatMap(b, ek, en);
  } else if (trans_a && !trans_b) {
    cm.noalias() += ConstMatMap(a, ek, em).transpose() * ConstMatMap(b, ek, en);
  } else if (!trans_a && trans_b) {
    cm.noalias() += ConstMatMap(a, em, ek) * ConstMatMap(b, en, ek).transpose();
  } else {
    cm.noalias() += ConstMatMap(a, ek, em).transpose() * ConstMatMap(b, en, ek).transpose();
  }
}

// ---- dense -----------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  expect_rank(w, 2, "linear weight");
  if (last_dim(x) != w.dim(0)) {
    throw ShapeError("linear: input last axis is " + std::to_string(last_dim(x)) + ", weight expects " +
                     std::to_string(w.dim(0)));
  }
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Tensor y(out_shape);
  const std::size_t n = rows_of(x), in = w.dim(0), out = w.dim(1);
  gemm(false, false, n, out, in, x.ptr(), w.ptr(), y.ptr(), 0.0);
  if (bias) {
    expect_shape(*bias, {out}, "linear bias");
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < out; ++j) y[r * out + j] += (*bias)[j];
  }
  return y;
}

Tensor linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dw, Tensor* dbias, bool need_dx) {
  const std::size_t n = rows_of(x), in = w.dim(0), out = w.dim(1);
  if (dw) gemm(true, false, in, out, n, x.ptr(), dy.ptr(), dw->ptr(), 1.0);
  if (dbias) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < out; ++j) (*dbias)[j] += dy[r * out + j];
  }
  if (!need_dx) return {};
  Tensor dx = Tensor::zeros_like(x);
  gemm(false, true, n, in, out, dy.ptr(), w.ptr(), dx.ptr(), 0.0);
  return dx;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, LayerNormCache* cache, double eps) {
  const std::size_t d = last_dim(x), n = rows_of(x);
  expect_shape(gamma, {d}, "layer_norm gamma");
  expect_shape(beta, {d}, "layer_norm beta");
  Tensor y = Tensor::zeros_like(x);
  Tensor xhat = Tensor::zeros_like(x);
  std::vector<double> rstd(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.ptr() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mean) * rstd[r];
      xhat[r * d + j] = xh;
      y[r * d + j] = xh * gamma[j] + beta[j];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Tensor layer_norm_backward(const LayerNormCache& cache, const Tensor& gamma, const Tensor& dy, Tensor* dgamma,
                           Tensor* dbeta) {
  const Tensor& xhat = cache.xhat;
  const std::size_t d = last_dim(xhat), n = rows_of(xhat);
  Tensor dx = Tensor::zeros_like(xhat);
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < n; ++r) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dy[r * d + j];
      if (dgamma) (*dgamma)[j] += g * xhat[r * d + j];
      if (dbeta) (*dbeta)[j] += g;
      dxhat[j] = g * gamma[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xhat[r * d + j];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx[r * d + j] = cache.rstd[r] * (dxhat[j] - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
    }
  }
  return dx;
}

// ---- elementwise -----------------------------------------------------------

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

Tensor relu(const Tensor& x) {
  return map_elementwise(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

Tensor gelu(const Tensor& x) { return map_elementwise(x, gelu_scalar); }

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = Tensor::zeros_like(x);
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    dx[i] = dy[i] * (cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v));
  }
  return dx;
}

Tensor sigmoid(const Tensor& x) { return map_elementwise(x, sigmoid_scalar); }

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = Tensor::zeros_like(y);
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
  return dx;
}

Tensor softplus(const Tensor& x) { return map_elementwise(x, softplus_scalar); }

Tensor softplus_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * sigmoid_scalar(x[i]);
  return dx;
}

Tensor add(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "add");
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "mul");
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b[i];
  return y;
}

Tensor scale(const Tensor& a, double s) {
  Tensor y = a;
  for (double& v : y.data()) v *= s;
  return y;
}

// ---- reductions ------------------------------------------------------------

Tensor softmax(const Tensor& x) {
  const std::size_t d = last_dim(x), n = rows_of(x);
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.ptr() + r * d;
    double* out = y.ptr() + r * d;
    const double mx = *std::max_element(row, row + d);
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out[j] = std::exp(row[j] - mx);
      sum += out[j];
    }
    for (std::size_t j = 0; j < d; ++j) out[j] /= sum;
  }
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
  const std::size_t d = last_dim(y), n = rows_of(y);
  Tensor dx = Tensor::zeros_like(y);
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += y[r * d + j] * dy[r * d + j];
    for (std::size_t j = 0; j < d; ++j) dx[r * d + j] = y[r * d + j] * (dy[r * d + j] - dot);
  }
  return dx;
}

Tensor l2_normalize(const Tensor& x) {
  double sq = 0.0;
  for (double v : x.data()) sq += v * v;
  if (!(sq > 0.0) || !std::isfinite(sq)) throw std::domain_error("degenerate descriptor");
  return scale(x, 1.0 / std::sqrt(sq));
}

Tensor l2_normalize_backward(const Tensor& x, const Tensor& dy) {
  double sq = 0.0;
  for (double v : x.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * dy[i];
  dot /= norm;  // y . dy
  Tensor dx = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = (dy[i] - (x[i] / norm) * dot) / norm;
  return dx;
}

// ---- spatial ---------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, std::size_t stride, std::size_t padding) {
  expect_rank(input, 3, "conv2d input");
  expect_rank(kernel, 4, "conv2d kernel");
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin) {
    throw ShapeError("conv2d: channel axis mismatch, input has " + std::to_string(cin) + ", kernel expects " +
                     std::to_string(kernel.dim(1)));
  }
  if (kernel.dim(3) != k) throw ShapeError("conv2d: kernel width axis differs from height axis");
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  check_conv_extent(h, padding, k, "height");
  check_conv_extent(w, padding, k, "width");
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (w + 2 * padding - k) / stride + 1;
  const RowMat cols = im2col(input, k, stride, padding, ho, wo);
  Tensor y({ho, wo, cout});
  gemm(false, true, ho * wo, cout, cin * k * k, cols.data(), kernel.ptr(), y.ptr(), 0.0);
  if (bias) {
    expect_shape(*bias, {cout}, "conv2d bias");
    for (std::size_t p = 0; p < ho * wo; ++p)
      for (std::size_t co = 0; co < cout; ++co) y[p * cout + co] += (*bias)[co];
  }
  return y;
}

Tensor conv2d_backward(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding,
                       const Tensor& dy, Tensor* dkernel, Tensor* dbias, bool need_dx) {
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  const std::size_t ho = dy.dim(0), wo = dy.dim(1);
  const std::size_t ckk = cin * k * k;
  if (dkernel) {
    const RowMat cols = im2col(input, k, stride, padding, ho, wo);
    gemm(true, false, cout, ckk, ho * wo, dy.ptr(), cols.data(), dkernel->ptr(), 1.0);
  }
  if (dbias) {
    for (std::size_t p = 0; p < ho * wo; ++p)
      for (std::size_t co = 0; co < cout; ++co) (*dbias)[co] += dy[p * cout + co];
  }
  if (!need_dx) return {};
  RowMat dcols(static_cast<Eigen::Index>(ho * wo), static_cast<Eigen::Index>(ckk));
  gemm(false, false, ho * wo, ckk, cout, dy.ptr(), kernel.ptr(), dcols.data(), 0.0);
  Tensor dx = Tensor::zeros_like(input);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      const double* row = dcols.data() + (oy * wo + ox) * ckk;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          double* dst = dx.ptr() + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
          for (std::size_t ci = 0; ci < cin; ++ci) dst[ci] += row[(ci * k + ky) * k + kx];
        }
      }
    }
  }
  return dx;
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, std::size_t padding) {
  expect_rank(input, 3, "depthwise_conv2d input");
  expect_rank(kernel, 3, "depthwise_conv2d kernel");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2), k = kernel.dim(1);
  if (kernel.dim(0) != c) {
    throw ShapeError("depthwise_conv2d: channel axis mismatch, input has " + std::to_string(c) + ", kernel has " +
                     std::to_string(kernel.dim(0)));
  }
  check_conv_extent(h, padding, k, "height");
  check_conv_extent(w, padding, k, "width");
  const std::size_t ho = h + 2 * padding - k + 1, wo = w + 2 * padding - k + 1;
  Tensor y({ho, wo, c});
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      double* out = y.ptr() + (oy * wo + ox) * c;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy + ky) - static_cast<long>(padding);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox + kx) - static_cast<long>(padding);
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const double* src = input.ptr() + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) out[ch] += src[ch] * kernel[(ch * k + ky) * k + kx];
        }
      }
      if (bias) {
        for (std::size_t ch = 0; ch < c; ++ch) out[ch] += (*bias)[ch];
      }
    }
  }
  return y;
}

Tensor depthwise_conv2d_backward(const Tensor& input, const Tensor& kernel, std::size_t padding, const Tensor& dy,
                                 Tensor* dkernel, Tensor* dbias) {
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2), k = kernel.dim(1);
  const std::size_t ho = dy.dim(0), wo = dy.dim(1);
  Tensor dx = Tensor::zeros_like(input);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      const double* g = dy.ptr() + (oy * wo + ox) * c;
      if (dbias) {
        for (std::size_t ch = 0; ch < c; ++ch) (*dbias)[ch] += g[ch];
      }
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy + ky) - static_cast<long>(padding);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox + kx) - static_cast<long>(padding);
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const std::size_t base = (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t ki = (ch * k + ky) * k + kx;
            dx[base + ch] += g[ch] * kernel[ki];
            if (dkernel) (*dkernel)[ki] += g[ch] * input[base + ch];
          }
        }
      }
    }
  }
  return dx;
}

Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  expect_rank(input, 3, "bilinear_resize input");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: output extent must be >= 1");
  const std::size_t w = input.dim(1), c = input.dim(2);
  const auto ty = resample_taps(input.dim(0), out_h);
  const auto tx = resample_taps(w, out_w);
  Tensor y({out_h, out_w, c});
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      const double* p00 = input.ptr() + (ty[i].i0 * w + tx[j].i0) * c;
      const double* p01 = input.ptr() + (ty[i].i0 * w + tx[j].i1) * c;
      const double* p10 = input.ptr() + (ty[i].i1 * w + tx[j].i0) * c;
      const double* p11 = input.ptr() + (ty[i].i1 * w + tx[j].i1) * c;
      const double fy = ty[i].frac, fx = tx[j].frac;
      double* out = y.ptr() + (i * out_w + j) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[ch] = (1 - fy) * ((1 - fx) * p00[ch] + fx * p01[ch]) + fy * ((1 - fx) * p10[ch] + fx * p11[ch]);
      }
    }
  }
  return y;
}

Tensor bilinear_resize_backward(const Shape& input_shape, const Tensor& dy) {
  const std::size_t w = input_shape[1], c = input_shape[2];
  const std::size_t out_h = dy.dim(0), out_w = dy.dim(1);
  const auto ty = resample_taps(input_shape[0], out_h);
  const auto tx = resample_taps(w, out_w);
  Tensor dx(input_shape);
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      const double fy = ty[i].frac, fx = tx[j].frac;
      const double* g = dy.ptr() + (i * out_w + j) * c;
      double* d00 = dx.ptr() + (ty[i].i0 * w + tx[j].i0) * c;
      double* d01 = dx.ptr() + (ty[i].i0 * w + tx[j].i1) * c;
      double* d10 = dx.ptr() + (ty[i].i1 * w + tx[j].i0) * c;
      double* d11 = dx.ptr() + (ty[i].i1 * w + tx[j].i1) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        d00[ch] += (1 - fy) * (1 - fx) * g[ch];
        d01[ch] += (1 - fy) * fx * g[ch];
        d10[ch] += fy * (1 - fx) * g[ch];
        d11[ch] += fy * fx * g[ch];
      }
    }
  }
  return dx;
}

Tensor avg_pool(const Tensor& input, std::size_t window) {
  expect_rank(input, 3, "avg_pool input");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (window == 0 || h % window || w % window) {
    throw ShapeError("avg_pool: window " + std::to_string(window) + " does not tile " + shape_str(input.shape()));
  }
  const std::size_t ho = h / window, wo = w / window;
  const double inv = 1.0 / static_cast<double>(window * window);
  Tensor y({ho, wo, c});
  for (std::size_t y0 = 0; y0 < h; ++y0)
    for (std::size_t x0 = 0; x0 < w; ++x0)
      for (std::size_t ch = 0; ch < c; ++ch) y.at(y0 / window, x0 / window, ch) += inv * input.at(y0, x0, ch);
  return y;
}

Tensor avg_pool_backward(const Shape& input_shape, std::size_t window, const Tensor& dy) {
  Tensor dx(input_shape);
  const double inv = 1.0 / static_cast<double>(window * window);
  for (std::size_t y0 = 0; y0 < input_shape[0]; ++y0)
    for (std::size_t x0 = 0; x0 < input_shape[1]; ++x0)
      for (std::size_t ch = 0; ch < input_shape[2]; ++ch) dx.at(y0, x0, ch) = inv * dy.at(y0 / window, x0 / window, ch);
  return dx;
}

// ---- attention -------------------------------------------------------------

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionCache* cache) {
  expect_rank(q, 2, "attention Q");
  expect_rank(k, 2, "attention K");
  expect_rank(v, 2, "attention V");
  if (q.dim(1) != k.dim(1)) throw ShapeError("attention: Q and K disagree on axis 1 (d_k)");
  if (k.dim(0) != v.dim(0)) throw ShapeError("attention: K and V disagree on axis 0 (token count)");
  const std::size_t nq = q.dim(0), nk = k.dim(0), dk = q.dim(1), dv = v.dim(1);
  Tensor scores({nq, nk});
  gemm(false, true, nq, nk, dk, q.ptr(), k.ptr(), scores.ptr(), 0.0);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  for (double& s : scores.data()) s *= inv_sqrt;
  Tensor weights = softmax(scores);
  Tensor out({nq, dv});
  gemm(false, false, nq, dv, nk, weights.ptr(), v.ptr(), out.ptr(), 0.0);
  if (cache) cache->weights = std::move(weights);
  return out;
}

AttentionGrads attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionCache& cache,
                                  const Tensor& dout) {
  const std::size_t nq = q.dim(0), nk = k.dim(0), dk = q.dim(1), dv = v.dim(1);
  const Tensor& a = cache.weights;
  AttentionGrads g{Tensor::zeros_like(q), Tensor::zeros_like(k), Tensor::zeros_like(v)};
  gemm(true, false, nk, dv, nq, a.ptr(), dout.ptr(), g.dv.ptr(), 0.0);
  Tensor da({nq, nk});
  gemm(false, true, nq, nk, dv, dout.ptr(), v.ptr(), da.ptr(), 0.0);
  Tensor ds = softmax_backward(a, da);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  for (double& s : ds.data()) s *= inv_sqrt;
  gemm(false, false, nq, dk, nk, ds.ptr(), k.ptr(), g.dq.ptr(), 0.0);
  gemm(true, false, nk, dk, nq, ds.ptr(), q.ptr(), g.dk.ptr(), 0.0);
  return g;
}

}  // namespace lgcn::ops
