#pragma once

#include <string>

#include "lgcn/config.hpp"
#include "lgcn/params.hpp"

namespace lgcn {

/// Frequency-spatial adapter parameters for one transformer block.
///
/// Patch tokens are reshaped to a G x G x D map, projected down to Cr
/// channels, sent through a depthwise-conv spatial branch and an
/// amplitude-modulating frequency branch, concatenated, projected back to D
/// and scaled. The fusion projection starts at zero, so a fresh adapter is a
/// no-op.
struct FsaParams {
  Param down_w;       // D x Cr
  Param down_b;       // Cr
  Param dw_kernel;    // Cr x 3 x 3
  Param dw_bias;      // Cr
  Param gain_logits;  // G x G x Cr; gains = exp(logits), so always positive
  Param fuse_w;       // 2Cr x D
  Param fuse_b;       // D
  Param scale;        // 1

  static FsaParams init(const ModelConfig& cfg, Rng& rng);
  std::size_t channels() const { return down_w.value.dim(1); }
  std::size_t parameter_count() const;
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct FsaOptions {
  /// Apply GELU after the depthwise conv. Disabled only to test linearity.
  bool spatial_activation = true;
};

// ---- spatial branch --------------------------------------------------------

struct SpatialCache {
  Tensor input;
  Tensor pre;  // depthwise conv output before activation
};

Tensor spatial_branch(const Tensor& map, const Tensor& kernel, const Tensor& bias, bool activation,
                      SpatialCache* cache);
Tensor spatial_branch_backward(const SpatialCache& cache, const Tensor& kernel, bool activation, const Tensor& dy,
                               Tensor* dkernel, Tensor* dbias);

// ---- frequency branch ------------------------------------------------------

struct FrequencyCache {
  Tensor amplitude;  // |X|
  Tensor phase;      // arg X
};

/// Scales the amplitude spectrum of each channel by `gains` (phase kept) and
/// returns the real part of the inverse transform.
Tensor frequency_branch(const Tensor& map, const Tensor& gains, FrequencyCache* cache);
/// Backpropagates through amplitude and phase separately. Returns dL/dmap and
/// accumulates dL/dgains.
Tensor frequency_branch_backward(const FrequencyCache& cache, const Tensor& gains, const Tensor& dy, Tensor* dgains);

// ---- full adapter ----------------------------------------------------------

struct FsaCache {
  Tensor map;  // G x G x D patch map
  Tensor down;
  Tensor gains;
  SpatialCache spatial;
  FrequencyCache frequency;
  Tensor concat;
  Tensor fused;  // before the residual scale
};

/// tokens: (1 + G^2) x D with the class token first. Returns the residual
/// term with the same shape; its class-token row is zero.
Tensor fsa_forward(const FsaParams& p, const Tensor& tokens, std::size_t grid, FsaCache* cache,
                   const FsaOptions& options = {});
/// Returns dL/dtokens; accumulates parameter gradients when `param_grads`.
Tensor fsa_backward(FsaParams& p, const FsaCache& cache, const Tensor& dresidual, bool param_grads,
                    const FsaOptions& options = {});

}  // namespace lgcn
