#include "lgcn/cnn.hpp"

#include <cmath>

#include "lgcn/ops.hpp"

namespace lgcn {

namespace {

Tensor he_kernel(std::size_t cout, std::size_t cin, Rng& rng) {
  return randn({cout, cin, 3, 3}, std::sqrt(2.0 / static_cast<double>(cin * 9)), rng);
}

}  // namespace

CnnParams CnnParams::init(const ModelConfig& cfg, Rng& rng) {
  CnnParams p;
  p.k1 = Param(he_kernel(cfg.cnn_width1, 3, rng));
  p.b1 = Param(Tensor({cfg.cnn_width1}));
  p.k2 = Param(he_kernel(cfg.cnn_width2, cfg.cnn_width1, rng));
  p.b2 = Param(Tensor({cfg.cnn_width2}));
  p.k3 = Param(he_kernel(cfg.cnn_channels, cfg.cnn_width2, rng));
  p.b3 = Param(Tensor({cfg.cnn_channels}));
  p.align_k = Param(randn({cfg.embed_dim, cfg.cnn_channels, 3, 3},
                          1.0 / std::sqrt(static_cast<double>(cfg.cnn_channels * 9)), rng));
  p.align_b = Param(Tensor({cfg.embed_dim}));
  return p;
}

void CnnParams::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + "k1", k1);
  f(prefix + "b1", b1);
  f(prefix + "k2", k2);
  f(prefix + "b2", b2);
  f(prefix + "k3", k3);
  f(prefix + "b3", b3);
  f(prefix + "align_k", align_k);
  f(prefix + "align_b", align_b);
}

Tensor cnn_forward(const Tensor& image, const CnnParams& p, const ModelConfig& cfg, CnnCache* cache) {
  expect_shape(image, {cfg.image_size, cfg.image_size, 3}, "cnn_forward image");
  Tensor pre1 = ops::conv2d(image, p.k1.value, &p.b1.value, 2, 1);
  Tensor act1 = ops::relu(pre1);
  Tensor pre2 = ops::conv2d(act1, p.k2.value, &p.b2.value, 2, 1);
  Tensor act2 = ops::relu(pre2);
  Tensor pre3 = ops::conv2d(act2, p.k3.value, &p.b3.value, 2, 1);
  Tensor act3 = ops::relu(pre3);
  Tensor out = ops::avg_pool(act3, cfg.cnn_pool());
  if (cache) {
    cache->image = image;
    cache->pre1 = std::move(pre1);
    cache->act1 = std::move(act1);
    cache->pre2 = std::move(pre2);
    cache->act2 = std::move(act2);
    cache->pre3 = std::move(pre3);
    cache->act3 = std::move(act3);
  }
  return out;
}

void cnn_backward(CnnParams& p, const ModelConfig& cfg, const CnnCache& c, const Tensor& dout) {
  Tensor d = ops::avg_pool_backward(c.act3.shape(), cfg.cnn_pool(), dout);
  d = ops::relu_backward(c.pre3, d);
  d = ops::conv2d_backward(c.act2, p.k3.value, 2, 1, d, &p.k3.grad, &p.b3.grad);
  d = ops::relu_backward(c.pre2, d);
  d = ops::conv2d_backward(c.act1, p.k2.value, 2, 1, d, &p.k2.grad, &p.b2.grad);
  d = ops::relu_backward(c.pre1, d);
  ops::conv2d_backward(c.image, p.k1.value, 2, 1, d, &p.k1.grad, &p.b1.grad, false);
}

Tensor align_upsample(const Tensor& f_res, const CnnParams& p, const ModelConfig& cfg, AlignCache* cache) {
  expect_rank(f_res, 3, "align_upsample input");
  if (cfg.align_side < f_res.dim(0) || cfg.align_side > cfg.grid) {
    throw std::invalid_argument("align_upsample: intermediate side " + std::to_string(cfg.align_side) +
                                " must lie between " + std::to_string(f_res.dim(0)) + " and " +
                                std::to_string(cfg.grid));
  }
  Tensor resized = ops::bilinear_resize(f_res, cfg.align_side, cfg.align_side);
  Tensor conv = ops::conv2d(resized, p.align_k.value, &p.align_b.value, 1, 1);
  Tensor out = ops::bilinear_resize(conv, cfg.grid, cfg.grid);
  if (cache) {
    cache->input_shape = f_res.shape();
    cache->resized = std::move(resized);
    cache->conv = std::move(conv);
  }
  return out;
}

Tensor align_upsample_backward(CnnParams& p, const AlignCache& c, const Tensor& dout, bool need_dx) {
  const Tensor dconv = ops::bilinear_resize_backward(c.conv.shape(), dout);
  const Tensor dresized =
      ops::conv2d_backward(c.resized, p.align_k.value, 1, 1, dconv, &p.align_k.grad, &p.align_b.grad, need_dx);
  if (!need_dx) return {};
  return ops::bilinear_resize_backward(c.input_shape, dresized);
}

}  // namespace lgcn
