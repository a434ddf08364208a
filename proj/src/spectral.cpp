#include "lgcn/spectral.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace lgcn::spectral {

namespace {

struct Twiddles {
  std::vector<double> cos, sin;  // n x n, entry (k, j) = cos/sin(2*pi*k*j/n)
};

Twiddles make_twiddles(std::size_t n) {
  Twiddles t{std::vector<double>(n * n), std::vector<double>(n * n)};
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      // reduce k*j mod n first so large indices keep full precision
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
      t.cos[k * n + j] = std::cos(angle);
      t.sin[k * n + j] = std::sin(angle);
    }
  }
  return t;
}

// out[u,v] = scale * sum_{h,w} in[h,w] * exp(sign * 2*pi*i*(u*h/H + v*w/W)), per channel.
ComplexGrid transform(const Tensor& re, const Tensor* im, int sign, double scale) {
  expect_rank(re, 3, "dft input");
  const std::size_t h = re.dim(0), w = re.dim(1), c = re.dim(2);
  const Twiddles th = make_twiddles(h), tw = make_twiddles(w);
  const double s = static_cast<double>(sign);

  // pass 1: along width
  Tensor mid_re({h, w, c}), mid_im({h, w, c});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t v = 0; v < w; ++v) {
      double* orr = mid_re.ptr() + (y * w + v) * c;
      double* oi = mid_im.ptr() + (y * w + v) * c;
      for (std::size_t x = 0; x < w; ++x) {
        const double cs = tw.cos[v * w + x], sn = s * tw.sin[v * w + x];
        const double* ir = re.ptr() + (y * w + x) * c;
        if (im) {
          const double* ii = im->ptr() + (y * w + x) * c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            orr[ch] += ir[ch] * cs - ii[ch] * sn;
            oi[ch] += ir[ch] * sn + ii[ch] * cs;
          }
        } else {
          for (std::size_t ch = 0; ch < c; ++ch) {
            orr[ch] += ir[ch] * cs;
            oi[ch] += ir[ch] * sn;
          }
        }
      }
    }
  }

  // pass 2: along height
  ComplexGrid out{Tensor({h, w, c}), Tensor({h, w, c})};
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t y = 0; y < h; ++y) {
      const double cs = th.cos[u * h + y], sn = s * th.sin[u * h + y];
      for (std::size_t v = 0; v < w; ++v) {
        const double* ir = mid_re.ptr() + (y * w + v) * c;
        const double* ii = mid_im.ptr() + (y * w + v) * c;
        double* orr = out.re.ptr() + (u * w + v) * c;
        double* oi = out.im.ptr() + (u * w + v) * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          orr[ch] += ir[ch] * cs - ii[ch] * sn;
          oi[ch] += ir[ch] * sn + ii[ch] * cs;
        }
      }
    }
  }
  if (scale != 1.0) {
    for (double& v : out.re.data()) v *= scale;
    for (double& v : out.im.data()) v *= scale;
  }
  return out;
}

double inverse_scale(const Tensor& t) { return 1.0 / static_cast<double>(t.dim(0) * t.dim(1)); }

}  // namespace

ComplexGrid dft2d(const Tensor& input) { return transform(input, nullptr, -1, 1.0); }

ComplexGrid idft2d_complex(const ComplexGrid& input) {
  expect_same_shape(input.re, input.im, "idft2d imaginary plane");
  return transform(input.re, &input.im, +1, inverse_scale(input.re));
}

Tensor idft2d(const ComplexGrid& input) { return idft2d_complex(input).re; }

Tensor dft2d_backward(const ComplexGrid& grad) { return transform(grad.re, &grad.im, +1, 1.0).re; }

ComplexGrid idft2d_backward(const Tensor& grad) { return transform(grad, nullptr, -1, inverse_scale(grad)); }

}  // namespace lgcn::spectral
