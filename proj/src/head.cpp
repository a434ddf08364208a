#include "lgcn/head.hpp"

#include <algorithm>
#include <cmath>

#include "lgcn/ops.hpp"

namespace lgcn {

namespace {

constexpr double kGemFloor = 1e-6;

Tensor row_of(const Tensor& t, std::size_t r) {
  const std::size_t w = t.size() / t.dim(0);
  return Tensor({w}, std::vector<double>(t.storage().begin() + static_cast<long>(r * w),
                                         t.storage().begin() + static_cast<long>((r + 1) * w)));
}

}  // namespace

std::vector<Region> region_layout(std::size_t grid) {
  const std::size_t half = grid / 2, start = (grid - half) / 2;
  return {{0, grid, 0, grid}, {0, grid, 0, half}, {0, grid, half, grid}, {start, start + half, start, start + half}};
}

Tensor regional_pool(const Tensor& map, double p, PoolCache* cache) {
  expect_rank(map, 3, "regional_pool input");
  if (map.dim(0) != map.dim(1) || map.dim(0) % 2) {
    throw ShapeError("regional_pool: expected an even square grid, got " + shape_str(map.shape()));
  }
  const std::size_t c = map.dim(2);
  const auto regions = region_layout(map.dim(0));
  Tensor pooled({regions.size(), c});
  std::vector<double> acc(c);
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const Region& reg = regions[r];
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t y = reg.y0; y < reg.y1; ++y)
      for (std::size_t x = reg.x0; x < reg.x1; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += std::pow(std::max(map.at(y, x, ch), kGemFloor), p);
    const double n = static_cast<double>((reg.y1 - reg.y0) * (reg.x1 - reg.x0));
    for (std::size_t ch = 0; ch < c; ++ch) pooled.at(r, ch) = std::pow(acc[ch] / n, 1.0 / p);
  }
  if (cache) {
    cache->input = map;
    cache->pooled = pooled;
    cache->p = p;
  }
  return pooled;
}

Tensor regional_pool_backward(const PoolCache& cache, const Tensor& dpooled) {
  const Tensor& map = cache.input;
  const std::size_t c = map.dim(2);
  const double p = cache.p;
  const auto regions = region_layout(map.dim(0));
  Tensor dx = Tensor::zeros_like(map);
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const Region& reg = regions[r];
    const double n = static_cast<double>((reg.y1 - reg.y0) * (reg.x1 - reg.x0));
    for (std::size_t y = reg.y0; y < reg.y1; ++y) {
      for (std::size_t x = reg.x0; x < reg.x1; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double v = map.at(y, x, ch);
          if (v <= kGemFloor) continue;
          const double g = cache.pooled.at(r, ch);
          dx.at(y, x, ch) += dpooled.at(r, ch) * std::pow(v, p - 1.0) * std::pow(g, 1.0 - p) / n;
        }
      }
    }
  }
  return dx;
}

HeadParams HeadParams::init(std::size_t channels, std::size_t heads, Rng& rng) {
  return HeadParams{Mhsa::init(channels, heads, rng, /*zero_proj=*/true)};
}

void HeadParams::visit(const std::string& prefix, const ParamVisitor& f) { attn.visit(prefix + "attn.", f); }

Tensor cross_image_correlate(const Tensor& batch, const HeadParams& p, CorrelateCache* cache) {
  expect_rank(batch, 3, "cross_image_correlate batch");
  const std::size_t b = batch.dim(0), r = batch.dim(1), c = batch.dim(2);
  const Tensor tokens = batch.reshaped({b * r, c});
  Tensor out = ops::add(tokens, mhsa_forward(p.attn, tokens, cache ? &cache->attn : nullptr));
  if (cache) cache->shape = batch.shape();
  return out.reshaped({b, r, c});
}

Tensor cross_image_correlate_backward(HeadParams& p, const CorrelateCache& cache, const Tensor& dout) {
  const std::size_t b = cache.shape[0], r = cache.shape[1], c = cache.shape[2];
  const Tensor dtokens = dout.reshaped({b * r, c});
  Tensor dx = dtokens;
  dx.axpy(1.0, mhsa_backward(p.attn, cache.attn, dtokens, true));
  return dx.reshaped(cache.shape);
}

Tensor finalize(const Tensor& batch) {
  expect_rank(batch, 3, "finalize batch");
  const std::size_t b = batch.dim(0), w = batch.dim(1) * batch.dim(2);
  Tensor out({b, w});
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor v = ops::l2_normalize(row_of(batch, i));
    std::copy(v.storage().begin(), v.storage().end(), out.storage().begin() + static_cast<long>(i * w));
  }
  return out;
}

Tensor finalize_backward(const Tensor& batch, const Tensor& dout) {
  const std::size_t b = batch.dim(0), w = batch.dim(1) * batch.dim(2);
  Tensor dx = Tensor::zeros_like(batch);
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor g = ops::l2_normalize_backward(row_of(batch, i), row_of(dout, i));
    std::copy(g.storage().begin(), g.storage().end(), dx.storage().begin() + static_cast<long>(i * w));
  }
  return dx;
}

}  // namespace lgcn
