#include "lgcn/mhsa.hpp"

#include <cmath>

namespace lgcn {

Mhsa Mhsa::init(std::size_t dim, std::size_t heads, Rng& rng, bool zero_proj) {
  if (heads == 0 || dim % heads) throw ShapeError("mhsa: dim " + std::to_string(dim) + " not divisible by heads");
  const double std_in = 1.0 / std::sqrt(static_cast<double>(dim));
  Mhsa m;
  m.heads = heads;
  m.qkv_w = Param(randn({dim, 3 * dim}, std_in, rng));
  m.qkv_b = Param(Tensor({3 * dim}));
  m.proj_w = Param(zero_proj ? Tensor({dim, dim}) : randn({dim, dim}, std_in, rng));
  m.proj_b = Param(Tensor({dim}));
  return m;
}

void Mhsa::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + "qkv_w", qkv_w);
  f(prefix + "qkv_b", qkv_b);
  f(prefix + "proj_w", proj_w);
  f(prefix + "proj_b", proj_b);
}

namespace {

Tensor take_columns(const Tensor& src, std::size_t offset, std::size_t width) {
  const std::size_t n = src.dim(0), stride = src.dim(1);
  Tensor out({n, width});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = src[r * stride + offset + j];
  return out;
}

void put_columns(Tensor& dst, const Tensor& src, std::size_t offset) {
  const std::size_t n = src.dim(0), width = src.dim(1), stride = dst.dim(1);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < width; ++j) dst[r * stride + offset + j] = src[r * width + j];
}

}  // namespace

Tensor mhsa_forward(const Mhsa& m, const Tensor& x, MhsaCache* cache) {
  expect_rank(x, 2, "mhsa input");
  const std::size_t d = m.dim(), dh = d / m.heads, n = x.dim(0);
  const Tensor qkv = ops::linear(x, m.qkv_w.value, &m.qkv_b.value);
  Tensor merged({n, d});
  MhsaCache local;
  MhsaCache& c = cache ? *cache : local;
  c.q.resize(m.heads);
  c.k.resize(m.heads);
  c.v.resize(m.heads);
  c.att.resize(m.heads);
  for (std::size_t h = 0; h < m.heads; ++h) {
    c.q[h] = take_columns(qkv, h * dh, dh);
    c.k[h] = take_columns(qkv, d + h * dh, dh);
    c.v[h] = take_columns(qkv, 2 * d + h * dh, dh);
    put_columns(merged, ops::attention(c.q[h], c.k[h], c.v[h], &c.att[h]), h * dh);
  }
  Tensor y = ops::linear(merged, m.proj_w.value, &m.proj_b.value);
  if (cache) {
    cache->x = x;
    cache->merged = std::move(merged);
  }
  return y;
}

Tensor mhsa_backward(Mhsa& m, const MhsaCache& c, const Tensor& dy, bool param_grads) {
  const std::size_t d = m.dim(), dh = d / m.heads, n = c.x.dim(0);
  const Tensor dmerged = ops::linear_backward(c.merged, m.proj_w.value, dy, param_grads ? &m.proj_w.grad : nullptr,
                                              param_grads ? &m.proj_b.grad : nullptr);
  Tensor dqkv({n, 3 * d});
  for (std::size_t h = 0; h < m.heads; ++h) {
    const Tensor dout = take_columns(dmerged, h * dh, dh);
    const ops::AttentionGrads g = ops::attention_backward(c.q[h], c.k[h], c.v[h], c.att[h], dout);
    put_columns(dqkv, g.dq, h * dh);
    put_columns(dqkv, g.dk, d + h * dh);
    put_columns(dqkv, g.dv, 2 * d + h * dh);
  }
  return ops::linear_backward(c.x, m.qkv_w.value, dqkv, param_grads ? &m.qkv_w.grad : nullptr,
                              param_grads ? &m.qkv_b.grad : nullptr);
}

}  // namespace lgcn
