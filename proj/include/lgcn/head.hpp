#pragma once

#include <string>
#include <vector>

#include "lgcn/mhsa.hpp"

namespace lgcn {

inline constexpr std::size_t kRegions = 4;  // full, left half, right half, center crop

struct Region {
  std::size_t y0, y1, x0, x1;  // half-open
};

/// Region layout over a G x G map: full map, left half, right half, and the
/// centered G/2 x G/2 crop.
std::vector<Region> region_layout(std::size_t grid);

struct PoolCache {
  Tensor input;
  Tensor pooled;  // R x C
  double p = 3.0;
};

/// Generalized-mean pooling (mean(x^p))^(1/p) per channel and region.
/// Inputs are expected positive; values are floored at 1e-6.
Tensor regional_pool(const Tensor& map, double p, PoolCache* cache);
Tensor regional_pool_backward(const PoolCache& cache, const Tensor& dpooled);

struct HeadParams {
  Mhsa attn;  // output projection starts at zero, so the head starts as identity

  static HeadParams init(std::size_t channels, std::size_t heads, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct CorrelateCache {
  MhsaCache attn;
  Shape shape;
};

/// batch: B x R x C. One attention layer over all B*R tokens (tokens attend
/// across images), plus the residual.
Tensor cross_image_correlate(const Tensor& batch, const HeadParams& p, CorrelateCache* cache);
Tensor cross_image_correlate_backward(HeadParams& p, const CorrelateCache& cache, const Tensor& dout);

/// B x R x C -> B x (R*C), each row L2-normalized. Throws
/// std::domain_error("degenerate descriptor") on an all-zero row.
Tensor finalize(const Tensor& batch);
Tensor finalize_backward(const Tensor& batch, const Tensor& dout);

}  // namespace lgcn
