#pragma once

#include <string>
#include <vector>

#include "lgcn/ops.hpp"
#include "lgcn/params.hpp"

namespace lgcn {

/// Multi-head self-attention: fused QKV projection, per-head scaled
/// dot-product attention, concatenation, output projection.
struct Mhsa {
  std::size_t heads = 1;
  Param qkv_w;  // D x 3D
  Param qkv_b;  // 3D
  Param proj_w; // D x D
  Param proj_b; // D

  static Mhsa init(std::size_t dim, std::size_t heads, Rng& rng, bool zero_proj = false);
  std::size_t dim() const { return qkv_w.value.dim(0); }
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct MhsaCache {
  Tensor x;
  std::vector<Tensor> q, k, v;
  std::vector<ops::AttentionCache> att;
  Tensor merged;  // concatenated head outputs, n x D
};

Tensor mhsa_forward(const Mhsa& m, const Tensor& x, MhsaCache* cache);
/// Returns dL/dx; accumulates parameter gradients when `param_grads`.
Tensor mhsa_backward(Mhsa& m, const MhsaCache& cache, const Tensor& dy, bool param_grads);

}  // namespace lgcn
