#pragma once

#include <string>

#include "lgcn/config.hpp"
#include "lgcn/params.hpp"

namespace lgcn {

/// Dynamic fusion: a per-position bottleneck gate over the summed streams,
/// gated recombination, and two learnable balance scalars.
struct DfmParams {
  Param w1, b1;  // D x ceil(D/4): channel compression (1x1 conv)
  Param w2, b2;  // ceil(D/4) x D: excitation
  Param alpha1;  // weight on the gated ViT term
  Param alpha2;  // weight on the complementary term

  static DfmParams init(const ModelConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct GateCache {
  Tensor input;
  Tensor hidden_pre;
  Tensor hidden;
  Tensor omega;
};

/// omega = sigmoid(w2 * relu(w1 * F)) at every spatial position.
Tensor gate_weights(const Tensor& f, const DfmParams& p, GateCache* cache);
/// Returns dL/dF; accumulates gate parameter gradients.
Tensor gate_weights_backward(DfmParams& p, const GateCache& cache, const Tensor& domega);

struct DfmCache {
  Tensor f_vit, f_res;
  GateCache gate;
};

/// F = F_ViT + F'_Res, omega = gate(F), then
///   cross-stream:   alpha1 * omega . F_ViT + alpha2 * (1 - omega) . F'_Res
///   vit-only: alpha1 * omega . F_ViT + alpha2 * (1 - omega) . F_ViT
Tensor dfm_forward(const Tensor& f_vit, const Tensor& f_res, const DfmParams& p, DfmMode mode, DfmCache* cache);

struct DfmGrads {
  Tensor d_vit, d_res;
};
DfmGrads dfm_backward(DfmParams& p, DfmMode mode, const DfmCache& cache, const Tensor& dout);

}  // namespace lgcn
